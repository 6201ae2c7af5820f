#include "scgan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

#include "scgan/image_io.hpp"

namespace scgan::ckpt {

namespace {

constexpr char kArchiveMagic[8] = {'S', 'C', 'G', 'A', 'N', 'C', 'K', 'P'};
constexpr char kStateMagic[8] = {'S', 'C', 'G', 'A', 'N', 'S', 'T', 'A'};

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ull;
    }
    return h;
}

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <class T>
    void le(T v) {
        static_assert(std::is_unsigned_v<T>);
        for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(double v) { le(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    void shape(const Shape& s) {
        le(static_cast<std::uint32_t>(s.size()));
        for (int d : s) le(static_cast<std::uint32_t>(d));
    }
    std::vector<std::uint8_t> finish() {
        const std::uint64_t h = fnv1a(out_.data(), out_.size());
        le(h);
        return std::move(out_);
    }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    Reader(std::span<const std::uint8_t> b, const char* what) : b_(b), what_(what) {}
    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) throw std::runtime_error(std::string(what_) + " is truncated");
    }
    template <class T>
    T le() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b_[pos_ + i]) << (8 * i);
        pos_ += sizeof(T);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    Shape shape() {
        const auto rank = le<std::uint32_t>();
        if (rank > 8) throw std::runtime_error(std::string(what_) + " has an implausible tensor rank");
        Shape s(rank);
        for (auto& d : s) d = static_cast<int>(le<std::uint32_t>());
        need(shape_numel(s));  // cheap guard before allocating
        return s;
    }
    void magic(const char (&m)[8]) {
        if (str(8) != std::string(m, 8)) throw std::runtime_error(std::string(what_) + " has a bad magic header");
    }
    // The checksum covers everything before the final 8 bytes.
    void verify_checksum() {
        if (b_.size() < 8) throw std::runtime_error(std::string(what_) + " is truncated");
        const std::size_t body = b_.size() - 8;
        Reader tail(b_.subspan(body), what_);
        if (tail.le<std::uint64_t>() != fnv1a(b_.data(), body))
            throw std::runtime_error(std::string(what_) + " is corrupt (checksum mismatch)");
    }
    void finish() {
        if (pos_ + 8 != b_.size()) throw std::runtime_error(std::string(what_) + " has trailing bytes");
    }
    std::size_t pos() const { return pos_; }

private:
    std::span<const std::uint8_t> b_;
    const char* what_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_archive(const std::vector<NamedTensor>& entries) {
    Writer w;
    w.bytes(kArchiveMagic, 8);
    w.le(kArchiveVersion);
    w.le(static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        w.le(static_cast<std::uint32_t>(e.name.size()));
        w.bytes(e.name.data(), e.name.size());
        w.shape(e.value.shape());
        for (double v : e.value.values()) w.f32(v);
    }
    return w.finish();
}

std::vector<NamedTensor> decode_archive(std::span<const std::uint8_t> bytes) {
    Reader r(bytes, "parameter archive");
    r.magic(kArchiveMagic);
    const auto version = r.le<std::uint32_t>();
    if (version != kArchiveVersion)
        throw std::runtime_error("parameter archive version " + std::to_string(version) + " is not supported");
    r.verify_checksum();
    const auto count = r.le<std::uint32_t>();
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor e;
        e.name = r.str(r.le<std::uint32_t>());
        e.value = Tensor(r.shape());
        for (auto& v : e.value.storage()) v = std::bit_cast<float>(r.le<std::uint32_t>());
        out.push_back(std::move(e));
    }
    r.finish();
    return out;
}

void save_parameters(const nn::NetworkBundle& nb, const std::string& path) {
    std::vector<NamedTensor> entries;
    for (const auto& p : nb.all_params()) entries.push_back({p.name, p.var.value()});
    image::write_file(path, encode_archive(entries));
}

void load_parameters(nn::NetworkBundle& nb, const std::string& path) {
    const auto entries = decode_archive(image::read_file(path));
    auto params = nb.all_params();
    if (entries.size() != params.size())
        throw std::runtime_error(path + ": archive holds " + std::to_string(entries.size()) + " tensors, network has " +
                                 std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (entries[i].name != params[i].name || entries[i].value.shape() != params[i].var.shape())
            throw std::runtime_error(path + ": tensor " + entries[i].name + " " + shape_str(entries[i].value.shape()) +
                                     " does not match " + params[i].name + " " + shape_str(params[i].var.shape()));
        params[i].var.mutable_value() = entries[i].value;
    }
}

std::vector<std::uint8_t> encode_state(const nlohmann::ordered_json& meta, const std::vector<Tensor>& arrays) {
    Writer w;
    w.bytes(kStateMagic, 8);
    w.le(kStateVersion);
    const std::string text = meta.dump();
    w.le(static_cast<std::uint64_t>(text.size()));
    w.bytes(text.data(), text.size());
    w.le(static_cast<std::uint32_t>(arrays.size()));
    for (const auto& t : arrays) {
        w.shape(t.shape());
        for (double v : t.values()) w.f64(v);
    }
    return w.finish();
}

std::pair<nlohmann::ordered_json, std::vector<Tensor>> decode_state(std::span<const std::uint8_t> bytes) {
    Reader r(bytes, "training state");
    r.magic(kStateMagic);
    const auto version = r.le<std::uint32_t>();
    if (version != kStateVersion)
        throw std::runtime_error("training state version " + std::to_string(version) + " is not supported");
    r.verify_checksum();
    const auto len = r.le<std::uint64_t>();
    auto meta = nlohmann::ordered_json::parse(r.str(len));
    const auto count = r.le<std::uint32_t>();
    std::vector<Tensor> arrays;
    for (std::uint32_t i = 0; i < count; ++i) {
        Tensor t(r.shape());
        for (auto& v : t.storage()) v = std::bit_cast<double>(r.le<std::uint64_t>());
        arrays.push_back(std::move(t));
    }
    r.finish();
    return {std::move(meta), std::move(arrays)};
}

std::uint64_t parameter_checksum(const nn::NetworkBundle& nb) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& p : nb.all_params())
        for (double v : p.var.value().values()) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            std::uint8_t b[4] = {static_cast<std::uint8_t>(bits), static_cast<std::uint8_t>(bits >> 8),
                                 static_cast<std::uint8_t>(bits >> 16), static_cast<std::uint8_t>(bits >> 24)};
            h = fnv1a(b, 4, h);
        }
    return h;
}

}  // namespace scgan::ckpt
