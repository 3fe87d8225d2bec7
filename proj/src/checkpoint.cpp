#include "mfx/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace mfx {

namespace {

constexpr char kMagic[8] = {'M', 'F', 'X', 'C', 'K', 'P', 'T', '\0'};

class Writer {
public:
    void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}

    std::size_t offset() const noexcept { return pos_; }
    bool done() const noexcept { return pos_ == in_.size(); }

    void need(std::size_t n, const char* what) {
        if (in_.size() - pos_ < n)
            throw FormatError(pos_, std::string("checkpoint truncated while reading ") + what);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(in_[pos_++]);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(in_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(in_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
    std::string str(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(in_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::vector<float> floats(std::uint64_t count, const char* what) {
        if (count > (in_.size() - pos_) / 4) throw FormatError(pos_, std::string("checkpoint truncated in ") + what);
        std::vector<float> v(count);
        for (auto& x : v) x = f32(what);
        return v;
    }

private:
    std::string_view in_;
    std::size_t pos_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(const TrainState& state) {
    std::ostringstream rng;
    rng << state.rng;
    return {state.model.spec(), state.params, state.optimizer, rng.str(), state.epoch, state.history};
}

TrainState resume(const Checkpoint& ckpt) {
    Model model = compile(ckpt.spec);
    ParameterVector params(model.layout(), flatten(ckpt.params));
    std::mt19937_64 rng;
    std::istringstream is(ckpt.rng_state);
    is >> rng;
    if (!is) throw InvalidArgument("checkpoint rng state is unreadable");
    return TrainState{std::move(model), std::move(params), ckpt.optimizer, rng, ckpt.epoch, ckpt.history};
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kCheckpointVersion);
    w.str(serialize_spec(ckpt.spec));
    const auto& layout = ckpt.params.layout();
    w.u32(static_cast<std::uint32_t>(layout.num_segments()));
    for (std::size_t s = 0; s < layout.num_segments(); ++s) {
        const auto& seg = layout.segment(s);
        w.str(seg.name);
        w.u32(static_cast<std::uint32_t>(seg.shape.size()));
        for (auto d : seg.shape) w.u64(d);
        for (float v : ckpt.params.segment(s)) w.f32(v);
    }
    const auto& o = ckpt.optimizer;
    w.u8(static_cast<std::uint8_t>(o.settings.kind));
    w.f64(o.settings.learning_rate);
    w.f64(o.settings.beta1);
    w.f64(o.settings.beta2);
    w.f64(o.settings.epsilon);
    w.f64(o.settings.weight_decay);
    w.u64(o.step);
    w.u64(o.first_moment.size());
    for (float v : o.first_moment) w.f32(v);
    w.u64(o.second_moment.size());
    for (float v : o.second_moment) w.f32(v);
    w.str(ckpt.rng_state);
    w.u64(ckpt.epoch);
    w.u64(ckpt.history.size());
    for (const auto& h : ckpt.history) {
        w.u64(h.epoch);
        w.f64(h.loss_sum);
        w.u64(h.batches);
        w.f64(h.val_accuracy);
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    r.need(sizeof kMagic, "magic");
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw FormatError(0, "not a checkpoint (bad magic)");
    for (std::size_t i = 0; i < sizeof kMagic; ++i) r.u8("magic");
    const std::size_t version_at = r.offset();
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw FormatError(version_at, "unsupported checkpoint version " + std::to_string(version));

    Checkpoint ck;
    const std::size_t spec_at = r.offset();
    try {
        ck.spec = deserialize_spec(r.str("model spec"));
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(spec_at, std::string("bad model spec: ") + e.what());
    }
    Model model = [&] {
        try {
            return compile(ck.spec);
        } catch (const Error& e) {
            throw FormatError(spec_at, std::string("model spec does not compile: ") + e.what());
        }
    }();
    const auto& layout = *model.layout();

    const std::size_t count_at = r.offset();
    const std::uint32_t nseg = r.u32("segment count");
    if (nseg != layout.num_segments())
        throw FormatError(count_at, "checkpoint has " + std::to_string(nseg) + " segments, model spec needs " +
                                        std::to_string(layout.num_segments()));
    std::vector<float> flat;
    flat.reserve(layout.total_size());
    for (std::uint32_t s = 0; s < nseg; ++s) {
        const auto& want = layout.segment(s);
        const std::size_t seg_at = r.offset();
        const std::string name = r.str("segment name");
        const std::uint32_t rank = r.u32("segment rank");
        if (rank > 8) throw FormatError(seg_at, "segment " + name + " has implausible rank " + std::to_string(rank));
        Shape shape(rank);
        for (auto& d : shape) d = r.u64("segment dims");
        if (name != want.name || shape != want.shape)
            throw FormatError(seg_at, "segment " + name + " " + shape_to_string(shape) + " does not match expected " +
                                          want.name + " " + shape_to_string(want.shape));
        auto vals = r.floats(want.size, "segment values");
        flat.insert(flat.end(), vals.begin(), vals.end());
    }
    ck.params = ParameterVector(model.layout(), std::move(flat));

    auto& o = ck.optimizer;
    const std::size_t kind_at = r.offset();
    const std::uint8_t kind = r.u8("optimizer kind");
    if (kind > static_cast<std::uint8_t>(OptimizerKind::AdamW))
        throw FormatError(kind_at, "unknown optimizer kind " + std::to_string(kind));
    o.settings.kind = static_cast<OptimizerKind>(kind);
    o.settings.learning_rate = r.f64("learning rate");
    o.settings.beta1 = r.f64("beta1");
    o.settings.beta2 = r.f64("beta2");
    o.settings.epsilon = r.f64("epsilon");
    o.settings.weight_decay = r.f64("weight decay");
    o.step = r.u64("optimizer step");
    const std::size_t m_at = r.offset();
    const std::uint64_t m_len = r.u64("first moment length");
    if (m_len != 0 && m_len != layout.total_size()) throw FormatError(m_at, "first moment length mismatch");
    o.first_moment = r.floats(m_len, "first moment");
    const std::size_t v_at = r.offset();
    const std::uint64_t v_len = r.u64("second moment length");
    if (v_len != m_len) throw FormatError(v_at, "second moment length mismatch");
    o.second_moment = r.floats(v_len, "second moment");
    ck.rng_state = r.str("rng state");
    ck.epoch = r.u64("epoch");
    const std::size_t hist_at = r.offset();
    const std::uint64_t nh = r.u64("history count");
    if (nh > bytes.size()) throw FormatError(hist_at, "implausible history length");
    ck.history.resize(nh);
    for (auto& h : ck.history) {
        h.epoch = r.u64("history epoch");
        h.loss_sum = r.f64("history loss");
        h.batches = r.u64("history batches");
        h.val_accuracy = r.f64("history accuracy");
    }
    if (!r.done()) throw FormatError(r.offset(), "trailing bytes after checkpoint");
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const std::string bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace mfx
