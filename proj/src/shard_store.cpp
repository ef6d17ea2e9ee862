#include "sti/shard_store.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>

#include <fcntl.h>
#include <unistd.h>

namespace sti {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}
void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

struct Reader {
    const std::uint8_t* p;
    const std::uint8_t* end;

    void need(std::size_t n) const {
        if (static_cast<std::size_t>(end - p) < n) throw CorruptShardError("truncated shard file");
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[0] | p[1] << 8);
        p += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        p += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        p += 8;
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

ShardFileHeader header_for(const QuantizedShard& q) {
    ShardFileHeader h;
    h.layer = static_cast<std::uint16_t>(q.id.layer);
    h.slice = static_cast<std::uint16_t>(q.id.slice);
    h.bitwidth = static_cast<std::uint16_t>(q.bitwidth);
    h.shape = q.shape;
    h.centroid_count = static_cast<std::uint32_t>(q.centroids.size());
    h.outlier_count = static_cast<std::uint32_t>(q.outliers.size());
    h.payload_len = q.payload.size();
    h.total_weights = q.weight_count();
    h.outlier_fraction = q.outlier_fraction();
    return h;
}

std::vector<std::uint8_t> encode_header(const ShardFileHeader& h) {
    std::vector<std::uint8_t> out;
    out.reserve(kShardHeaderBytes);
    out.insert(out.end(), kShardMagic, kShardMagic + 4);
    put_u16(out, h.version);
    put_u16(out, h.layer);
    put_u16(out, h.slice);
    put_u16(out, h.bitwidth);
    for (auto [rows, cols] : h.shape) {
        put_u32(out, rows);
        put_u32(out, cols);
    }
    put_u32(out, h.centroid_count);
    put_u32(out, h.outlier_count);
    put_u64(out, h.payload_len);
    put_u64(out, h.total_weights);
    put_f64(out, h.outlier_fraction);
    return out;
}

ShardFileHeader decode_header(Reader& r) {
    r.need(kShardHeaderBytes);
    if (std::memcmp(r.p, kShardMagic, 4) != 0) throw CorruptShardError("bad magic");
    r.p += 4;
    ShardFileHeader h;
    h.version = r.u16();
    if (h.version != kShardFormatVersion)
        throw CorruptShardError("unsupported format version " + std::to_string(h.version));
    h.layer = r.u16();
    h.slice = r.u16();
    h.bitwidth = r.u16();
    for (auto& [rows, cols] : h.shape) {
        rows = r.u32();
        cols = r.u32();
    }
    h.centroid_count = r.u32();
    h.outlier_count = r.u32();
    h.payload_len = r.u64();
    h.total_weights = r.u64();
    h.outlier_fraction = r.f64();
    return h;
}

void sanity_check(const ShardFileHeader& h) {
    std::uint64_t weights = 0;
    for (auto [rows, cols] : h.shape) weights += static_cast<std::uint64_t>(rows) * cols;
    if (weights != h.total_weights) throw CorruptShardError("total_weights disagrees with dimensions");
    if (h.bitwidth == kFullFidelityBits) {
        if (h.centroid_count != 0) throw CorruptShardError("k=32 shard with centroids");
        if (h.payload_len != weights * 4) throw CorruptShardError("k=32 payload length mismatch");
    } else {
        if (h.bitwidth < 1 || h.bitwidth > 16) throw CorruptShardError("bad bitwidth");
        if (h.centroid_count != (1u << h.bitwidth)) throw CorruptShardError("centroid_count != 2^k");
        if (h.payload_len != (weights * h.bitwidth + 7) / 8)
            throw CorruptShardError("payload length mismatch");
    }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        std::error_code ec;
        if (!std::filesystem::exists(file, ec))
            throw MissingShardError("missing shard file: " + file.string());
        throw IoError("cannot open " + file.string());
    }
    in.seekg(0, std::ios::end);
    const auto len = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::uint8_t> bytes(len);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(len));
    if (!in) throw IoError("short read from " + file.string());
    return bytes;
}

}  // namespace

std::uint64_t shard_file_size(const ShardFileHeader& h) {
    return kShardHeaderBytes + 4ull * h.centroid_count + 8ull * h.outlier_count + h.payload_len;
}

std::uint64_t shard_file_size(const QuantizedShard& q) { return shard_file_size(header_for(q)); }

std::filesystem::path shard_rel_path(ShardId id, int bitwidth) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "layer%02d/s%02d_k%02d.shard", id.layer, id.slice, bitwidth);
    return buf;
}

std::filesystem::path shard_path(const ModelManifest& manifest, ShardId id, int bitwidth) {
    return manifest.root() / shard_rel_path(id, bitwidth);
}

std::filesystem::path write_shard(const QuantizedShard& q, const std::filesystem::path& dir) {
    const ShardFileHeader h = header_for(q);
    std::vector<std::uint8_t> bytes = encode_header(h);
    bytes.reserve(shard_file_size(h));
    for (float c : q.centroids) put_f32(bytes, c);
    for (const auto& o : q.outliers) {
        put_u32(bytes, o.offset);
        put_f32(bytes, o.value);
    }
    bytes.insert(bytes.end(), q.payload.begin(), q.payload.end());

    const auto path = dir / shard_rel_path(q.id, q.bitwidth);
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) throw IoError("short write to " + path.string());
    return path;
}

QuantizedShard read_shard(const std::filesystem::path& file) {
    const auto bytes = read_file_bytes(file);
    Reader r{bytes.data(), bytes.data() + bytes.size()};
    const ShardFileHeader h = decode_header(r);
    sanity_check(h);
    if (bytes.size() != shard_file_size(h)) throw CorruptShardError("file size mismatch: " + file.string());

    QuantizedShard q;
    q.id = {h.layer, h.slice};
    q.bitwidth = h.bitwidth;
    q.shape = h.shape;
    q.centroids.resize(h.centroid_count);
    for (auto& c : q.centroids) c = r.f32();
    q.outliers.resize(h.outlier_count);
    std::uint32_t prev_off = 0;
    for (std::size_t i = 0; i < q.outliers.size(); ++i) {
        q.outliers[i].offset = r.u32();
        q.outliers[i].value = r.f32();
        if (i > 0 && q.outliers[i].offset <= prev_off)
            throw CorruptShardError("outlier offsets not strictly increasing");
        if (q.outliers[i].offset >= h.total_weights)
            throw CorruptShardError("outlier offset beyond shard");
        prev_off = q.outliers[i].offset;
    }
    q.payload.assign(r.p, r.p + h.payload_len);
    return q;
}

bool check_shard_header(const std::filesystem::path& file, const ModelManifest& manifest, ShardId id,
                        int bitwidth, std::string* why) {
    try {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw IoError("cannot open " + file.string());
        std::uint8_t buf[kShardHeaderBytes];
        in.read(reinterpret_cast<char*>(buf), kShardHeaderBytes);
        if (!in) throw CorruptShardError("truncated header");
        Reader r{buf, buf + kShardHeaderBytes};
        const ShardFileHeader h = decode_header(r);
        sanity_check(h);
        if (h.layer != id.layer || h.slice != id.slice || h.bitwidth != bitwidth)
            throw CorruptShardError("header identity disagrees with path");
        if (h.shape != shard_shape_for(manifest))
            throw CorruptShardError("dimensions disagree with manifest");
        std::error_code ec;
        const auto actual = std::filesystem::file_size(file, ec);
        if (ec || actual != shard_file_size(h)) throw CorruptShardError("file size mismatch");
        return true;
    } catch (const Error& e) {
        if (why) *why = e.what();
        return false;
    }
}

LayerLoadResult read_layer(const ModelManifest& manifest, const LayerLoadRequest& req) {
    std::set<int> seen;
    std::vector<std::pair<int, int>> wanted;
    for (auto [slice, k] : req.slices) {
        if (slice < 0 || slice >= manifest.n_slices)
            throw Error("slice out of range: " + std::to_string(slice));
        if (!seen.insert(slice).second) throw Error("duplicate slice in layer load request");
        if (req.skip.count({req.layer, slice})) continue;
        wanted.push_back({slice, k});
    }
    // one ordered pass, independent of request list order
    std::sort(wanted.begin(), wanted.end());

    LayerLoadResult result;
    for (auto [slice, k] : wanted) {
        const auto path = shard_path(manifest, {req.layer, slice}, k);
        QuantizedShard q = read_shard(path);
        result.bytes_read += shard_file_size(q);
        result.shards.push_back(std::move(q));
    }
    return result;
}

bool classify_cache_polluted(const std::vector<double>& samples_ms, bool bypassed) {
    if (bypassed || samples_ms.size() < 2) return false;
    const double first = samples_ms.front();
    const double min = *std::min_element(samples_ms.begin() + 1, samples_ms.end());
    return first > 0.0 && min < 0.5 * first;
}

namespace {

// Single sequential O_DIRECT pass over the request's files. Returns false if
// the platform refuses direct IO.
bool direct_read_pass(const std::vector<std::filesystem::path>& files, std::uint64_t* bytes) {
#ifdef O_DIRECT
    constexpr std::size_t kAlign = 4096;
    constexpr std::size_t kChunk = 1 << 20;
    void* raw = nullptr;
    if (posix_memalign(&raw, kAlign, kChunk) != 0) return false;
    std::unique_ptr<void, decltype(&std::free)> guard(raw, &std::free);
    for (const auto& f : files) {
        int fd = ::open(f.c_str(), O_RDONLY | O_DIRECT);
        if (fd < 0) return false;
        ssize_t n;
        while ((n = ::read(fd, raw, kChunk)) > 0) *bytes += static_cast<std::uint64_t>(n);
        const bool failed = n < 0;
        ::close(fd);
        if (failed) return false;
    }
    return true;
#else
    (void)files;
    (void)bytes;
    return false;
#endif
}

void drop_cache_best_effort(const std::vector<std::filesystem::path>& files) {
    for (const auto& f : files) {
        int fd = ::open(f.c_str(), O_RDONLY);
        if (fd < 0) continue;
        ::fsync(fd);
        ::posix_fadvise(fd, 0, 0, POSIX_FADV_DONTNEED);
        ::close(fd);
    }
}

}  // namespace

IoMeasurement measure_layer_io(const ModelManifest& manifest, const LayerLoadRequest& req,
                               const IoMeasureOptions& opts) {
    if (opts.trials < 1) throw Error("trials must be >= 1");
    std::vector<std::filesystem::path> files;
    for (auto [slice, k] : req.slices) {
        if (req.skip.count({req.layer, slice})) continue;
        files.push_back(shard_path(manifest, {req.layer, slice}, k));
    }
    std::sort(files.begin(), files.end());

    IoMeasurement m;
    bool direct_ok = opts.bypass_cache;
    for (int t = 0; t < opts.trials; ++t) {
        if (!direct_ok && opts.bypass_cache) drop_cache_best_effort(files);
        std::uint64_t bytes = 0;
        const auto t0 = std::chrono::steady_clock::now();
        if (direct_ok) {
            if (!direct_read_pass(files, &bytes)) {
                direct_ok = false;
                m.samples_ms.clear();
                t = -1;  // restart trials with the fallback path
                continue;
            }
        } else {
            for (const auto& f : files) bytes += read_file_bytes(f).size();
        }
        const auto t1 = std::chrono::steady_clock::now();
        m.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        m.bytes_per_trial = bytes;
    }
    m.cache_bypassed = direct_ok;
    m.cache_polluted = classify_cache_polluted(m.samples_ms, direct_ok || opts.bypass_cache);
    m.min_ms = *std::min_element(m.samples_ms.begin(), m.samples_ms.end());
    m.max_ms = *std::max_element(m.samples_ms.begin(), m.samples_ms.end());
    double sum = 0.0;
    for (double s : m.samples_ms) sum += s;
    m.mean_ms = sum / static_cast<double>(m.samples_ms.size());
    return m;
}

}  // namespace sti
