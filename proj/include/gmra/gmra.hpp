#pragma once

#include "gmra/errors.hpp"
#include "gmra/shelf.hpp"
#include "gmra/point_cloud.hpp"
#include "gmra/dataset.hpp"
#include "gmra/cover_tree.hpp"
#include "gmra/dyadic_tree.hpp"
#include "gmra/wavelets.hpp"
#include "gmra/shelf_io.hpp"
#include "gmra/pipeline.hpp"
