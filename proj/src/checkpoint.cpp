#include "cppruner/checkpoint.hpp"

#include "cppruner/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cppruner {

namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host expected");

class Writer {
public:
    void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void f64(double v) { bytes(&v, 8); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& s) : s_(s) {}
    void bytes(void* p, std::size_t n) {
        if (pos_ + n > s_.size())
            throw FormatError(FormatError::Kind::truncated, "checkpoint is truncated");
        std::memcpy(p, s_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    double f64() {
        double v;
        bytes(&v, 8);
        return v;
    }
    std::size_t remaining() const { return s_.size() - pos_; }

private:
    const std::string& s_;
    std::size_t pos_ = 0;
};

Activation activation_from_code(std::uint32_t code) {
    if (code > 3) throw FormatError(FormatError::Kind::bad_header, "unknown activation code");
    return static_cast<Activation>(code);
}

} // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    const auto& p = ckpt.params;
    Writer w;
    w.bytes("CPF1", 4);
    w.u32(static_cast<std::uint32_t>(p.order()));
    w.u32(static_cast<std::uint32_t>(p.rank()));
    w.u32(static_cast<std::uint32_t>(p.fourier().terms()));
    w.u32(static_cast<std::uint32_t>(p.depth()));
    for (std::size_t d = 0; d < p.order(); ++d)
        for (const auto& ls : p.layers(d)) {
            w.u32(static_cast<std::uint32_t>(ls.rows));
            w.u32(static_cast<std::uint32_t>(ls.cols));
        }
    w.u32(static_cast<std::uint32_t>(p.hidden_activation()));
    w.u32(static_cast<std::uint32_t>(p.head_activation()));
    w.u32(p.has_bias() ? 1u : 0u);
    for (double a : p.fourier().coeffs) w.f64(a);
    for (double b : p.fourier().freqs) w.f64(b);
    for (const auto& iv : p.domain()) {
        w.f64(iv.lo);
        w.f64(iv.hi);
    }
    for (double v : p.weights()) w.f64(v);
    if (ckpt.normalization) {
        w.bytes("SDFN", 4);
        for (double c : ckpt.normalization->center) w.f64(c);
        w.f64(ckpt.normalization->scale);
    }
    return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "CPF1", 4) != 0)
        throw FormatError(FormatError::Kind::bad_magic, "not a CPF1 checkpoint");
    const std::uint32_t D = r.u32(), R = r.u32(), m = r.u32(), L = r.u32();
    if (D == 0 || R == 0 || m == 0 || L == 0)
        throw FormatError(FormatError::Kind::bad_header, "checkpoint header has a zero field");
    std::vector<std::vector<LayerShape>> layers(D);
    for (auto& stack : layers)
        for (std::uint32_t l = 0; l < L; ++l) {
            const std::uint32_t rows = r.u32(), cols = r.u32();
            stack.push_back({rows, cols});
        }
    const Activation hidden = activation_from_code(r.u32());
    const Activation head = activation_from_code(r.u32());
    const bool bias = r.u32() != 0;
    FourierMap map;
    map.coeffs.resize(m);
    map.freqs.resize(m);
    for (auto& a : map.coeffs) a = r.f64();
    for (auto& b : map.freqs) b = r.f64();
    std::vector<Interval> domain(D);
    for (auto& iv : domain) {
        iv.lo = r.f64();
        iv.hi = r.f64();
    }
    Checkpoint ckpt;
    try {
        ckpt.params = FieldParams(R, std::move(map), std::move(layers), hidden, head, bias,
                                  std::move(domain));
    } catch (const StructuralError& e) {
        throw FormatError(FormatError::Kind::bad_header, std::string("checkpoint: ") + e.what());
    }
    for (auto& v : ckpt.params.weights()) v = r.f64();
    if (r.remaining() > 0) {
        char tag[4];
        r.bytes(tag, 4);
        if (std::memcmp(tag, "SDFN", 4) != 0)
            throw FormatError(FormatError::Kind::bad_header, "unknown checkpoint trailer");
        PointNormalization n;
        for (auto& c : n.center) c = r.f64();
        n.scale = r.f64();
        ckpt.normalization = n;
        if (r.remaining() > 0)
            throw FormatError(FormatError::Kind::bad_header, "trailing bytes after checkpoint");
    }
    return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    const auto bytes = encode_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str());
}

} // namespace cppruner
