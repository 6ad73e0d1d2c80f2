#pragma once

#include <stdexcept>
#include <string>

namespace gmra {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shelf store
class AlreadyExists : public Error { using Error::Error; };
class CapacityError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class CorruptionError : public Error { using Error::Error; };
class NameExists : public Error { using Error::Error; };
class NotFound : public Error { using Error::Error; };
class TxError : public Error { using Error::Error; };

// Point clouds and trees
class InvalidInput : public Error { using Error::Error; };

class DuplicatePoint : public Error {
public:
    DuplicatePoint(std::size_t first, std::size_t second)
        : Error("duplicate points at indices " + std::to_string(first) + " and " +
                std::to_string(second)),
          first_index(first),
          second_index(second) {}
    std::size_t first_index;
    std::size_t second_index;
};

// Transforms
class CoefficientError : public Error { using Error::Error; };

} // namespace gmra
