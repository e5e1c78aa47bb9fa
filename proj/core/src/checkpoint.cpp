#include "cfm/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <type_traits>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "cfm/errors.hpp"

namespace cfm {

namespace {

constexpr char magic[4] = {'C', 'F', 'M', 'C'};
constexpr std::uint8_t dtype_float64 = 1;

class Writer {
public:
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        out_.insert(out_.end(), p, p + n);
    }
    template <class T>
    void le(T value) {
        static_assert(std::is_unsigned_v<T>);
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
        }
    }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    std::vector<std::uint8_t>& buffer() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    const std::uint8_t* take(std::size_t n) {
        require(n <= size_ - pos_, ErrorKind::format, "checkpoint is truncated");
        const auto* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    template <class T>
    T le() {
        const auto* p = take(sizeof(T));
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            value |= static_cast<T>(p[i]) << (8 * i);
        }
        return value;
    }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
    [[nodiscard]] bool done() const { return pos_ == size_; }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

template <class T>
T parse_meta(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    require(it != meta.end(), ErrorKind::format, "checkpoint header lacks '" + key + "'");
    T value{};
    const auto& s = it->second;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    require(ec == std::errc{} && ptr == s.data() + s.size(), ErrorKind::format, "bad checkpoint header value for " + key);
    return value;
}

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) {
            return &t;
        }
    }
    return nullptr;
}

std::string Checkpoint::header_text() const {
    std::string text = config.canonical_text();
    text += "\n[checkpoint]\n";
    text += "stage = " + stage + "\n";
    text += "epoch = " + std::to_string(epoch) + "\n";
    text += "provenance = " + provenance + "\n";
    text += "rng_seed = " + std::to_string(rng_seed) + "\n";
    text += "rng_position = " + std::to_string(rng_position) + "\n";
    text += "generator_steps = " + std::to_string(generator_steps) + "\n";
    text += "discriminator_steps = " + std::to_string(discriminator_steps) + "\n";
    return text;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
    Writer w;
    w.bytes(magic, 4);
    w.le(checkpoint_version);
    const std::string text = checkpoint.header_text();
    w.le(static_cast<std::uint64_t>(text.size()));
    w.bytes(text.data(), text.size());
    w.le(static_cast<std::uint64_t>(checkpoint.tensors.size()));
    for (const auto& [name, tensor] : checkpoint.tensors) {
        w.le(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.le(dtype_float64);
        w.le(static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t d : tensor.shape()) {
            w.le(static_cast<std::uint64_t>(d));
        }
        for (double v : tensor.values()) {
            w.f64(v);
        }
    }
    auto& buf = w.buffer();
    const std::uint64_t sum = fnv1a64(buf.data(), buf.size());
    w.le(sum);
    return std::move(buf);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    require(bytes.size() >= 4 + 4 + 8, ErrorKind::format, "checkpoint is truncated");
    require(std::memcmp(bytes.data(), magic, 4) == 0, ErrorKind::format, "not a checkpoint (bad magic bytes)");
    const std::size_t body = bytes.size() - 8;
    Reader tail(bytes.data() + body, 8);
    const auto stored = tail.le<std::uint64_t>();
    require(stored == fnv1a64(bytes.data(), body), ErrorKind::checksum, "checkpoint checksum mismatch");

    Reader r(bytes.data(), body);
    r.take(4);
    const auto version = r.le<std::uint32_t>();
    require(version == checkpoint_version, ErrorKind::format,
            "checkpoint version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(checkpoint_version) + ")");
    const auto text_len = r.le<std::uint64_t>();
    const auto* text_ptr = r.take(text_len);
    const std::string text(reinterpret_cast<const char*>(text_ptr), text_len);

    Checkpoint ck;
    std::map<std::string, std::string> meta;
    ck.config = parse_config(text, &meta);
    ck.stage = meta.count("checkpoint.stage") ? meta["checkpoint.stage"] : "";
    ck.provenance = meta.count("checkpoint.provenance") ? meta["checkpoint.provenance"] : "";
    ck.epoch = parse_meta<int>(meta, "checkpoint.epoch");
    ck.rng_seed = parse_meta<std::uint64_t>(meta, "checkpoint.rng_seed");
    ck.rng_position = parse_meta<std::uint64_t>(meta, "checkpoint.rng_position");
    ck.generator_steps = parse_meta<std::int64_t>(meta, "checkpoint.generator_steps");
    ck.discriminator_steps = parse_meta<std::int64_t>(meta, "checkpoint.discriminator_steps");

    const auto count = r.le<std::uint64_t>();
    for (std::uint64_t k = 0; k < count; ++k) {
        const auto name_len = r.le<std::uint32_t>();
        const auto* name_ptr = r.take(name_len);
        std::string name(reinterpret_cast<const char*>(name_ptr), name_len);
        const auto dtype = r.le<std::uint8_t>();
        require(dtype == dtype_float64, ErrorKind::format, "unsupported tensor dtype tag " + std::to_string(dtype));
        const auto rank = r.le<std::uint32_t>();
        require(rank >= 1 && rank <= 8, ErrorKind::format, "implausible tensor rank in checkpoint");
        Shape shape(rank);
        std::uint64_t total = 1;
        for (auto& d : shape) {
            const auto dim = r.le<std::uint64_t>();
            require(dim > 0 && dim <= body, ErrorKind::format, "implausible tensor dimension in checkpoint");
            d = static_cast<std::size_t>(dim);
            total *= dim;
            require(total <= body, ErrorKind::format, "tensor payload exceeds checkpoint size");
        }
        std::vector<double> values(static_cast<std::size_t>(total));
        for (double& v : values) {
            v = r.f64();
        }
        ck.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    require(r.done(), ErrorKind::format, "trailing bytes after tensor table");
    return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    const auto bytes = encode_checkpoint(checkpoint);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorKind::io, "failed writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::io, "cannot open checkpoint '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace cfm
