#pragma once

// Shelf: named, typed, shaped arrays packed into a single fixed-capacity
// region, either file-backed (persistent, mmap) or anonymous memory
// (volatile). Both backends produce byte-identical region content for
// identical operation sequences.
//
// Region layout (little-endian):
//   bytes  0..7   magic "GMRASHLF"
//   bytes  8..11  version u32 = 1
//   bytes 12..19  capacity u64
//   bytes 20..27  entry count u64
//   bytes 28..31  consistency u32 (0 = none, 1 = wal)
//   bytes 32..    packed ArrayRecords:
//                 name_len u16 | name | dtype u8 | ndim u8 |
//                 shape u64*ndim | offset u64 | nbytes u64
//   payloads at 64-byte-aligned offsets, bump-allocated past the catalog
//   reserve (reserve = clamp(capacity/64, 4 KiB, 16 MiB); readers never need
//   this rule, offsets are explicit).
//
// WAL sidecar "<path>.wal": undo records
//   target_offset u64 | length u64 | old_bytes | crc32 u32
// where the CRC covers the 16 header bytes plus old_bytes. A transaction is
// a record sequence terminated by the 8-byte marker "TXCOMMIT". Logged
// writes go through put_array/update_array/erase_array; stores through a raw
// view bypass the log.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include "gmra/detail/binary_io.hpp"
#include "gmra/errors.hpp"

namespace gmra {

enum class Dtype : uint8_t { f32 = 1, f64 = 2, i64 = 3, u8 = 4 };

inline std::size_t dtype_size(Dtype t) {
    switch (t) {
        case Dtype::f32: return 4;
        case Dtype::f64: return 8;
        case Dtype::i64: return 8;
        case Dtype::u8: return 1;
    }
    throw InvalidInput("unknown dtype code " + std::to_string(static_cast<int>(t)));
}

inline const char* dtype_name(Dtype t) {
    switch (t) {
        case Dtype::f32: return "f32";
        case Dtype::f64: return "f64";
        case Dtype::i64: return "i64";
        case Dtype::u8: return "u8";
    }
    return "?";
}

enum class ShelfMode { volatile_mem, persistent };
enum class Consistency : uint32_t { none = 0, wal = 1 };

struct ArrayRecord {
    std::string name;
    Dtype dtype = Dtype::u8;
    std::vector<uint64_t> shape;
    uint64_t offset = 0;
    uint64_t nbytes = 0;

    uint64_t num_elements() const {
        uint64_t n = 1;
        for (uint64_t s : shape) n *= s;
        return n;
    }
};

class Shelf {
public:
    static constexpr std::string_view kMagic = "GMRASHLF";
    static constexpr uint32_t kVersion = 1;
    static constexpr uint64_t kHeaderSize = 32;
    static constexpr uint64_t kMinCapacity = 64 * 1024;
    static constexpr uint64_t kAlign = 64;
    static constexpr std::string_view kCommitMarker = "TXCOMMIT";
    static constexpr std::size_t kMaxDims = 8;
    static constexpr std::size_t kMaxNameLen = 255;

    Shelf() = default;
    Shelf(const Shelf&) = delete;
    Shelf& operator=(const Shelf&) = delete;
    Shelf(Shelf&& other) noexcept { *this = std::move(other); }
    Shelf& operator=(Shelf&& other) noexcept {
        if (this != &other) {
            close();
            path_ = std::move(other.path_);
            mode_ = other.mode_;
            consistency_ = other.consistency_;
            capacity_ = other.capacity_;
            base_ = other.base_;
            fd_ = other.fd_;
            wal_fd_ = other.wal_fd_;
            entries_ = std::move(other.entries_);
            bump_ = other.bump_;
            catalog_end_ = other.catalog_end_;
            data_start_ = other.data_start_;
            tx_open_ = other.tx_open_;
            volatile_log_ = std::move(other.volatile_log_);
            other.base_ = nullptr;
            other.fd_ = -1;
            other.wal_fd_ = -1;
            other.capacity_ = 0;
        }
        return *this;
    }
    ~Shelf() { close(); }

    static uint64_t catalog_reserve(uint64_t capacity) {
        uint64_t r = capacity / 64;
        r = std::max<uint64_t>(r, 4 * 1024);
        r = std::min<uint64_t>(r, 16 * 1024 * 1024);
        return r;
    }

    static uint64_t align_up(uint64_t v, uint64_t a = kAlign) { return (v + a - 1) / a * a; }

    static Shelf create(const std::string& path, uint64_t capacity_bytes, ShelfMode mode,
                        Consistency consistency) {
        if (capacity_bytes < kMinCapacity) {
            throw CapacityError("capacity " + std::to_string(capacity_bytes) +
                                " below minimum " + std::to_string(kMinCapacity));
        }
        Shelf s;
        s.path_ = path;
        s.mode_ = mode;
        s.consistency_ = consistency;
        s.capacity_ = capacity_bytes;
        if (mode == ShelfMode::persistent) {
            if (std::filesystem::exists(path)) throw AlreadyExists("shelf exists: " + path);
            s.fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_EXCL, 0644);
            if (s.fd_ < 0) throw AlreadyExists("cannot create shelf: " + path);
            if (::ftruncate(s.fd_, static_cast<off_t>(capacity_bytes)) != 0) {
                ::close(s.fd_);
                ::unlink(path.c_str());
                throw CapacityError("cannot size region file to " + std::to_string(capacity_bytes));
            }
            s.map_region(PROT_READ | PROT_WRITE, MAP_SHARED);
        } else {
            s.map_anonymous();
        }
        std::memcpy(s.base_, kMagic.data(), 8);
        detail::store_le<uint32_t>(s.base_ + 8, kVersion);
        detail::store_le<uint64_t>(s.base_ + 12, capacity_bytes);
        detail::store_le<uint64_t>(s.base_ + 20, 0);
        detail::store_le<uint32_t>(s.base_ + 28, static_cast<uint32_t>(consistency));
        s.catalog_end_ = kHeaderSize;
        s.data_start_ = align_up(kHeaderSize + catalog_reserve(capacity_bytes));
        s.bump_ = s.data_start_;
        if (consistency == Consistency::wal && mode == ShelfMode::persistent) {
            s.open_wal(true);
        }
        return s;
    }

    static Shelf open(const std::string& path) {
        Shelf s;
        s.path_ = path;
        s.mode_ = ShelfMode::persistent;
        if (!std::filesystem::exists(path)) throw NotFound("no shelf at: " + path);
        s.fd_ = ::open(path.c_str(), O_RDWR);
        if (s.fd_ < 0) throw NotFound("cannot open shelf: " + path);
        struct stat st {};
        if (::fstat(s.fd_, &st) != 0) throw FormatError("cannot stat shelf: " + path);
        const uint64_t file_size = static_cast<uint64_t>(st.st_size);
        if (file_size < kHeaderSize) throw FormatError("region smaller than header");
        s.capacity_ = file_size;
        s.map_region(PROT_READ | PROT_WRITE, MAP_SHARED);
        if (std::memcmp(s.base_, kMagic.data(), 8) != 0) throw FormatError("bad region magic");
        if (detail::load_le<uint32_t>(s.base_ + 8) != kVersion) throw FormatError("bad region version");
        const uint64_t capacity = detail::load_le<uint64_t>(s.base_ + 12);
        if (capacity != file_size) throw FormatError("capacity field does not match file size");
        const uint32_t cons = detail::load_le<uint32_t>(s.base_ + 28);
        if (cons > 1) throw FormatError("bad consistency field");
        s.consistency_ = static_cast<Consistency>(cons);
        s.data_start_ = align_up(kHeaderSize + catalog_reserve(capacity));
        if (s.consistency_ == Consistency::wal) {
            s.recover_wal();
            s.open_wal(false);
        }
        s.parse_catalog();
        return s;
    }

    // --- catalog ---

    const std::vector<ArrayRecord>& entries() const { return entries_; }

    std::vector<std::string> list_arrays() const {
        std::vector<std::string> names;
        names.reserve(entries_.size());
        for (const auto& e : entries_) names.push_back(e.name);
        return names;
    }

    bool contains(std::string_view name) const { return find_entry(name) != nullptr; }

    const ArrayRecord& record(std::string_view name) const {
        const ArrayRecord* rec = find_entry(name);
        if (!rec) throw NotFound("no array named '" + std::string(name) + "'");
        return *rec;
    }

    ArrayRecord put_array(const std::string& name, Dtype dtype,
                          const std::vector<uint64_t>& shape, std::span<const uint8_t> data) {
        if (name.empty() || name.size() > kMaxNameLen) {
            throw InvalidInput("array name must be 1..255 bytes");
        }
        if (find_entry(name)) throw NameExists("array '" + name + "' already on shelf");
        if (shape.size() > kMaxDims) throw InvalidInput("more than 8 dimensions");
        uint64_t elems = 1;
        for (uint64_t s : shape) {
            if (s != 0 && elems > UINT64_MAX / s) throw InvalidInput("shape overflow");
            elems *= s;
        }
        const uint64_t nbytes = elems * dtype_size(dtype);
        if (data.size() != nbytes) {
            throw InvalidInput("payload size " + std::to_string(data.size()) +
                               " does not match dtype*shape = " + std::to_string(nbytes));
        }
        const uint64_t off = bump_;
        if (off + nbytes > capacity_ || off + nbytes < off) {
            throw CapacityError("array '" + name + "' (" + std::to_string(nbytes) +
                                " bytes) does not fit; capacity " + std::to_string(capacity_));
        }
        ArrayRecord rec{name, dtype, shape, off, nbytes};
        const std::vector<uint8_t> packed = pack_record(rec);
        if (catalog_end_ + packed.size() > kHeaderSize + catalog_reserve(capacity_)) {
            throw CapacityError("catalog reserve exhausted");
        }

        const bool implicit = begin_implicit_tx();
        if (nbytes > 0) write_region(off, data.data(), nbytes);
        write_region(catalog_end_, packed.data(), packed.size());
        uint8_t count_le[8];
        detail::store_le<uint64_t>(count_le, entries_.size() + 1);
        write_region(20, count_le, 8);
        if (implicit) commit_tx();

        entries_.push_back(rec);
        catalog_end_ += packed.size();
        bump_ = off + align_up(nbytes);
        return rec;
    }

    // Typed view over the stored payload. The span aliases region memory:
    // reads are always safe, stores persist but bypass the WAL.
    std::span<uint8_t> array_bytes(std::string_view name) {
        const ArrayRecord& rec = record(name);
        return {base_ + rec.offset, rec.nbytes};
    }
    std::span<const uint8_t> array_bytes(std::string_view name) const {
        const ArrayRecord& rec = record(name);
        return {base_ + rec.offset, rec.nbytes};
    }

    struct ArrayView {
        Dtype dtype;
        std::vector<uint64_t> shape;
        std::span<uint8_t> bytes;
    };

    ArrayView get_array(std::string_view name) {
        const ArrayRecord& rec = record(name);
        return {rec.dtype, rec.shape, {base_ + rec.offset, rec.nbytes}};
    }

    // WAL-logged partial write into an existing payload.
    void update_array(std::string_view name, uint64_t byte_offset, std::span<const uint8_t> data) {
        const ArrayRecord& rec = record(name);
        if (byte_offset + data.size() > rec.nbytes) {
            throw InvalidInput("update range exceeds array payload");
        }
        if (data.empty()) return;
        const bool implicit = begin_implicit_tx();
        write_region(rec.offset + byte_offset, data.data(), data.size());
        if (implicit) commit_tx();
    }

    void erase_array(std::string_view name) {
        std::size_t idx = entries_.size();
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].name == name) { idx = i; break; }
        }
        if (idx == entries_.size()) throw NotFound("no array named '" + std::string(name) + "'");

        std::vector<uint8_t> repacked;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (i == idx) continue;
            const auto packed = pack_record(entries_[i]);
            repacked.insert(repacked.end(), packed.begin(), packed.end());
        }
        const uint64_t old_len = catalog_end_ - kHeaderSize;
        repacked.resize(old_len, 0); // zero the vacated tail

        const bool implicit = begin_implicit_tx();
        if (!repacked.empty()) write_region(kHeaderSize, repacked.data(), repacked.size());
        uint8_t count_le[8];
        detail::store_le<uint64_t>(count_le, entries_.size() - 1);
        write_region(20, count_le, 8);
        if (implicit) commit_tx();

        entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(idx));
        catalog_end_ = kHeaderSize;
        for (const auto& e : entries_) catalog_end_ += packed_size(e);
        // bump_ is left where it was: erased space is not reclaimed.
    }

    // --- transactions ---

    void begin_tx() {
        if (consistency_ != Consistency::wal) throw TxError("shelf consistency is 'none'");
        if (tx_open_) throw TxError("transaction already open");
        tx_open_ = true;
    }

    void commit_tx() {
        if (consistency_ != Consistency::wal) throw TxError("shelf consistency is 'none'");
        if (!tx_open_) throw TxError("no open transaction");
        if (wal_fd_ >= 0) {
            wal_append(reinterpret_cast<const uint8_t*>(kCommitMarker.data()), 8);
            ::fsync(wal_fd_);
            if (::ftruncate(wal_fd_, 0) != 0) throw CorruptionError("cannot truncate WAL");
            ::lseek(wal_fd_, 0, SEEK_SET);
        }
        volatile_log_.clear();
        tx_open_ = false;
    }

    bool in_tx() const { return tx_open_; }

    // --- lifecycle ---

    void flush() {
        if (base_ && mode_ == ShelfMode::persistent) {
            ::msync(base_, capacity_, MS_SYNC);
        }
    }

    void close() {
        if (base_) {
            flush();
            ::munmap(base_, capacity_);
            base_ = nullptr;
        }
        if (fd_ >= 0) { ::close(fd_); fd_ = -1; }
        if (wal_fd_ >= 0) { ::close(wal_fd_); wal_fd_ = -1; }
    }

    bool is_open() const { return base_ != nullptr; }
    const std::string& path() const { return path_; }
    ShelfMode mode() const { return mode_; }
    Consistency consistency() const { return consistency_; }
    uint64_t capacity() const { return capacity_; }
    uint64_t data_start() const { return data_start_; }

    std::span<const uint8_t> region_bytes() const { return {base_, capacity_}; }

    // Writes the full region to a file; a volatile run's shelf serialized at
    // the end is byte-compatible with a persistent region.
    void dump_region(const std::string& dest) const {
        std::ofstream out(dest, std::ios::binary | std::ios::trunc);
        if (!out) throw NotFound("cannot write region dump: " + dest);
        out.write(reinterpret_cast<const char*>(base_), static_cast<std::streamsize>(capacity_));
        if (!out) throw CapacityError("short write dumping region to " + dest);
    }

private:
    std::string path_;
    ShelfMode mode_ = ShelfMode::volatile_mem;
    Consistency consistency_ = Consistency::none;
    uint64_t capacity_ = 0;
    uint8_t* base_ = nullptr;
    int fd_ = -1;
    int wal_fd_ = -1;
    std::vector<ArrayRecord> entries_;
    uint64_t bump_ = 0;
    uint64_t catalog_end_ = 0;
    uint64_t data_start_ = 0;
    bool tx_open_ = false;
    std::vector<uint8_t> volatile_log_;

    void map_region(int prot, int flags) {
        void* p = ::mmap(nullptr, capacity_, prot, flags, fd_, 0);
        if (p == MAP_FAILED) throw CapacityError("mmap failed for " + path_);
        base_ = static_cast<uint8_t*>(p);
    }

    void map_anonymous() {
        void* p = ::mmap(nullptr, capacity_, PROT_READ | PROT_WRITE,
                         MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
        if (p == MAP_FAILED) throw CapacityError("anonymous mmap failed");
        base_ = static_cast<uint8_t*>(p);
    }

    std::string wal_path() const { return path_ + ".wal"; }

    void open_wal(bool truncate) {
        int flags = O_RDWR | O_CREAT | O_APPEND | (truncate ? O_TRUNC : 0);
        wal_fd_ = ::open(wal_path().c_str(), flags, 0644);
        if (wal_fd_ < 0) throw CorruptionError("cannot open WAL sidecar: " + wal_path());
    }

    void wal_append(const uint8_t* data, std::size_t len) {
        const uint8_t* p = data;
        std::size_t left = len;
        while (left > 0) {
            ssize_t w = ::write(wal_fd_, p, left);
            if (w < 0) throw CorruptionError("WAL append failed");
            p += w;
            left -= static_cast<std::size_t>(w);
        }
    }

    bool begin_implicit_tx() {
        if (consistency_ == Consistency::wal && !tx_open_) {
            begin_tx();
            return true;
        }
        return false;
    }

    void log_undo(uint64_t off, uint64_t len) {
        std::vector<uint8_t> rec(16 + len + 4);
        detail::store_le<uint64_t>(rec.data(), off);
        detail::store_le<uint64_t>(rec.data() + 8, len);
        std::memcpy(rec.data() + 16, base_ + off, len);
        const uint32_t crc = detail::crc32({rec.data(), 16 + len});
        detail::store_le<uint32_t>(rec.data() + 16 + len, crc);
        if (wal_fd_ >= 0) {
            wal_append(rec.data(), rec.size());
        } else {
            volatile_log_.insert(volatile_log_.end(), rec.begin(), rec.end());
        }
    }

    void write_region(uint64_t off, const uint8_t* src, uint64_t len) {
        if (len == 0) return;
        if (tx_open_) log_undo(off, len);
        std::memcpy(base_ + off, src, len);
    }

    static std::size_t packed_size(const ArrayRecord& rec) {
        return 2 + rec.name.size() + 1 + 1 + 8 * rec.shape.size() + 8 + 8;
    }

    static std::vector<uint8_t> pack_record(const ArrayRecord& rec) {
        std::vector<uint8_t> out(packed_size(rec));
        uint8_t* p = out.data();
        detail::store_le<uint16_t>(p, static_cast<uint16_t>(rec.name.size()));
        p += 2;
        std::memcpy(p, rec.name.data(), rec.name.size());
        p += rec.name.size();
        *p++ = static_cast<uint8_t>(rec.dtype);
        *p++ = static_cast<uint8_t>(rec.shape.size());
        for (uint64_t s : rec.shape) {
            detail::store_le<uint64_t>(p, s);
            p += 8;
        }
        detail::store_le<uint64_t>(p, rec.offset);
        p += 8;
        detail::store_le<uint64_t>(p, rec.nbytes);
        return out;
    }

    const ArrayRecord* find_entry(std::string_view name) const {
        for (const auto& e : entries_) {
            if (e.name == name) return &e;
        }
        return nullptr;
    }

    void parse_catalog() {
        const uint64_t count = detail::load_le<uint64_t>(base_ + 20);
        const uint64_t reserve_end = kHeaderSize + catalog_reserve(capacity_);
        uint64_t pos = kHeaderSize;
        entries_.clear();
        entries_.reserve(count);
        bump_ = data_start_;
        for (uint64_t i = 0; i < count; ++i) {
            if (pos + 2 > reserve_end) throw FormatError("catalog overruns reserve");
            const uint16_t name_len = detail::load_le<uint16_t>(base_ + pos);
            if (name_len == 0 || name_len > kMaxNameLen) throw FormatError("bad catalog name length");
            if (pos + 2 + name_len + 2 > reserve_end) throw FormatError("catalog overruns reserve");
            ArrayRecord rec;
            rec.name.assign(reinterpret_cast<const char*>(base_ + pos + 2), name_len);
            uint64_t q = pos + 2 + name_len;
            const uint8_t dtype_code = base_[q++];
            if (dtype_code < 1 || dtype_code > 4) throw FormatError("bad dtype code in catalog");
            rec.dtype = static_cast<Dtype>(dtype_code);
            const uint8_t ndim = base_[q++];
            if (ndim > kMaxDims) throw FormatError("bad ndim in catalog");
            if (q + 8ull * ndim + 16 > reserve_end) throw FormatError("catalog overruns reserve");
            rec.shape.resize(ndim);
            for (uint8_t d = 0; d < ndim; ++d) {
                rec.shape[d] = detail::load_le<uint64_t>(base_ + q);
                q += 8;
            }
            rec.offset = detail::load_le<uint64_t>(base_ + q);
            q += 8;
            rec.nbytes = detail::load_le<uint64_t>(base_ + q);
            q += 8;
            if (rec.nbytes != rec.num_elements() * dtype_size(rec.dtype)) {
                throw FormatError("catalog nbytes disagrees with dtype*shape");
            }
            if (rec.offset % kAlign != 0 || rec.offset + rec.nbytes > capacity_ ||
                rec.offset + rec.nbytes < rec.offset) {
                throw FormatError("catalog extent out of range");
            }
            if (find_entry(rec.name)) throw FormatError("duplicate catalog name");
            bump_ = std::max(bump_, align_up(rec.offset + rec.nbytes));
            entries_.push_back(std::move(rec));
            pos = q;
        }
        catalog_end_ = pos;
    }

    void recover_wal() {
        const std::string wp = wal_path();
        if (!std::filesystem::exists(wp)) return;
        std::ifstream in(wp, std::ios::binary);
        std::vector<uint8_t> log((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
        in.close();
        if (log.empty()) return;

        struct Undo { uint64_t off; uint64_t len; std::size_t data_pos; };
        std::vector<Undo> records;
        bool committed = false;
        bool bad_crc = false;
        std::size_t valid_prefix = 0; // records before the first bad-CRC one
        std::size_t pos = 0;
        while (pos < log.size()) {
            if (log.size() - pos >= 8 &&
                std::memcmp(log.data() + pos, kCommitMarker.data(), 8) == 0) {
                committed = true;
                break;
            }
            if (log.size() - pos < 16) break; // torn header
            const uint64_t off = detail::load_le<uint64_t>(log.data() + pos);
            const uint64_t len = detail::load_le<uint64_t>(log.data() + pos + 8);
            if (len > capacity_ || off > capacity_ || off + len > capacity_) break; // torn
            if (log.size() - pos < 16 + len + 4) break; // torn payload
            const uint32_t stored = detail::load_le<uint32_t>(log.data() + pos + 16 + len);
            const uint32_t actual = detail::crc32({log.data() + pos, 16 + len});
            if (stored != actual) {
                // Keep parsing structurally: a commit marker further on makes
                // this corruption rather than a torn tail.
                bad_crc = true;
            } else if (!bad_crc) {
                valid_prefix = records.size() + 1;
            }
            records.push_back({off, len, pos + 16});
            pos += 16 + len + 4;
        }

        if (committed && bad_crc) {
            throw CorruptionError("committed WAL contains a record with a bad checksum");
        }
        if (!committed) {
            // Torn transaction: roll back the trustworthy prefix, newest first.
            for (std::size_t i = valid_prefix; i-- > 0;) {
                std::memcpy(base_ + records[i].off, log.data() + records[i].data_pos,
                            records[i].len);
            }
            ::msync(base_, capacity_, MS_SYNC);
        }
        std::error_code ec;
        std::filesystem::resize_file(wp, 0, ec);
        if (ec) throw CorruptionError("cannot truncate WAL after recovery");
    }
};

} // namespace gmra
