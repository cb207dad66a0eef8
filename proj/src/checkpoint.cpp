#include "unimot/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "unimot/error.hpp"

namespace unimot {

namespace {

constexpr std::uint8_t kDtypeF64 = 1;

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <class T>
    void le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void str(const std::string& s) { bytes(s.data(), s.size()); }
    std::vector<unsigned char>& buffer() { return out_; }

private:
    std::vector<unsigned char> out_;
};

class Reader {
public:
    Reader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}

    const unsigned char* take(std::size_t n, const char* what) {
        require(n <= n_ - pos_, ErrorCode::format, std::string("checkpoint truncated while reading ") + what);
        const auto* r = p_ + pos_;
        pos_ += n;
        return r;
    }
    template <class T>
    T le(const char* what) {
        const auto* b = take(sizeof(T), what);
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b[i]) << (8 * i));
        return v;
    }
    std::string str(std::size_t n, const char* what) {
        const auto* b = take(n, what);
        return {reinterpret_cast<const char*>(b), n};
    }
    bool done() const { return pos_ == n_; }

private:
    const unsigned char* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

std::uint32_t crc(const unsigned char* p, std::size_t n) {
    uLong c = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        c = crc32(c, p, chunk);
        p += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(c);
}

void write_array(Writer& w, const std::string& name, const Tensor& t) {
    require(name.size() < 65536, ErrorCode::invalid_argument, "array name too long: " + name);
    require(t.rank() < 256, ErrorCode::invalid_argument, "array rank too large: " + name);
    w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.str(name);
    w.le<std::uint8_t>(kDtypeF64);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.le<std::uint64_t>(d);
    for (double v : t.data()) w.le<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
}

void read_array(Reader& r, const std::string& expected_name, Tensor& dst) {
    const auto len = r.le<std::uint16_t>("array name length");
    const std::string name = r.str(len, "array name");
    require(name == expected_name, ErrorCode::format,
            "checkpoint array '" + name + "' found where '" + expected_name + "' was expected");
    const auto dtype = r.le<std::uint8_t>("dtype");
    require(dtype == kDtypeF64, ErrorCode::format, "array '" + name + "' has unsupported dtype " + std::to_string(dtype));
    const auto rank = r.le<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.le<std::uint64_t>("dims"));
    require(shape == dst.shape(), ErrorCode::format,
            "array '" + name + "' has shape " + shape_str(shape) + ", config implies " + shape_str(dst.shape()));
    for (double& v : dst.data()) v = std::bit_cast<double>(r.le<std::uint64_t>("payload"));
}

std::size_t array_count(const ModelParams& p) {
    std::size_t n = 0;
    p.for_each([&](const std::string&, const Tensor&) { ++n; });
    return n;
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.le<std::uint32_t>(kCheckpointVersion);
    const std::string echo = format_config(ckpt.config);
    w.le<std::uint64_t>(echo.size());
    w.str(echo);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(2 * array_count(ckpt.params)));
    ckpt.params.for_each([&](const std::string& name, const Tensor& t) { write_array(w, "param/" + name, t); });
    ckpt.ema.for_each([&](const std::string& name, const Tensor& t) { write_array(w, "ema/" + name, t); });
    for (auto k : ckpt.rng.key()) w.le<std::uint32_t>(k);
    w.le<std::uint64_t>(ckpt.rng.counter());
    w.le<std::uint64_t>(ckpt.step);
    auto& buf = w.buffer();
    const std::uint32_t c = crc(buf.data(), buf.size());
    w.le<std::uint32_t>(c);
    return std::move(buf);
}

Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
    require(bytes.size() >= sizeof kCheckpointMagic + 4 + 4, ErrorCode::format, "checkpoint truncated: too short");
    require(std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) == 0, ErrorCode::format,
            "not a checkpoint: bad magic");
    Reader head(bytes.data() + sizeof kCheckpointMagic, 4);
    const auto version = head.le<std::uint32_t>("version");
    require(version == kCheckpointVersion, ErrorCode::version,
            "checkpoint version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(kCheckpointVersion) + ")");

    const std::size_t body = bytes.size() - 4;
    Reader tail(bytes.data() + body, 4);
    const auto stored = tail.le<std::uint32_t>("checksum");
    const auto actual = crc(bytes.data(), body);
    require(stored == actual, ErrorCode::checksum, "checkpoint checksum mismatch (file corrupted or truncated)");

    Reader r(bytes.data(), body);
    r.take(sizeof kCheckpointMagic + 4, "header");
    const auto echo_len = r.le<std::uint64_t>("config length");
    require(echo_len <= body, ErrorCode::format, "checkpoint truncated while reading config");
    Checkpoint ckpt;
    ckpt.config = parse_config(r.str(static_cast<std::size_t>(echo_len), "config"));
    ckpt.params = init_model(ckpt.config.model, RandomStream(0));
    ckpt.ema = ckpt.params;

    const auto count = r.le<std::uint32_t>("array count");
    require(count == 2 * array_count(ckpt.params), ErrorCode::format,
            "checkpoint holds " + std::to_string(count) + " arrays, config implies " +
                std::to_string(2 * array_count(ckpt.params)));
    ckpt.params.for_each([&](const std::string& name, Tensor& t) { read_array(r, "param/" + name, t); });
    ckpt.ema.for_each([&](const std::string& name, Tensor& t) { read_array(r, "ema/" + name, t); });
    RandomStream::Key key;
    for (auto& k : key) k = r.le<std::uint32_t>("rng key");
    const auto counter = r.le<std::uint64_t>("rng counter");
    ckpt.rng = RandomStream(key, counter);
    ckpt.step = r.le<std::uint64_t>("step");
    require(r.done(), ErrorCode::format, "checkpoint has trailing bytes before the checksum");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::io, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::io, "cannot open checkpoint " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace unimot
