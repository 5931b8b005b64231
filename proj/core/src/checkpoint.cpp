#include "lpad/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lpad {

namespace {

// Native-endian binary container; checkpoints are same-machine artifacts.

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void put_i64(std::ostream& out, std::int64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void put_u8(std::ostream& out, std::uint8_t v) { out.write(reinterpret_cast<const char*>(&v), 1); }
void put_f64s(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}
void put_str(std::ostream& out, const std::string& s) {
    put_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
std::int64_t get_i64(std::istream& in) {
    std::int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
std::uint8_t get_u8(std::istream& in) {
    std::uint8_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 1);
    return v;
}
std::vector<double> get_f64s(std::istream& in, std::size_t n) {
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
    return v;
}
std::string get_str(std::istream& in) {
    const std::uint64_t n = get_u64(in);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

void put_tensor(std::ostream& out, const Tensor& t) {
    put_u64(out, t.shape.size());
    for (auto e : t.shape) put_i64(out, e);
    put_f64s(out, t.data);
}

Tensor get_tensor(std::istream& in) {
    const std::uint64_t nd = get_u64(in);
    Shape shape(nd);
    for (auto& e : shape) e = get_i64(in);
    std::vector<double> data = get_f64s(in, static_cast<std::size_t>(shape_numel(shape)));
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << kCheckpointMagic << "\n";
    put_str(out, ckpt.config_snapshot);
    put_u64(out, ckpt.store.entries().size());
    for (const auto& e : ckpt.store.entries()) {
        put_str(out, e.name);
        put_u8(out, e.trainable ? 1 : 0);
        put_tensor(out, e.value);
        if (e.trainable) {
            put_tensor(out, e.m);
            put_tensor(out, e.v);
        }
    }
    put_i64(out, ckpt.store.step_count());
    put_u8(out, ckpt.chains ? 1 : 0);
    if (ckpt.chains) {
        const auto& c = *ckpt.chains;
        put_i64(out, c.C);
        put_i64(out, c.K);
        put_i64(out, c.L);
        put_i64(out, c.sweep_count);
        out.write(reinterpret_cast<const char*>(c.v.data()), static_cast<std::streamsize>(c.v.size()));
        out.write(reinterpret_cast<const char*>(c.h.data()), static_cast<std::streamsize>(c.h.size()));
    }
    put_u8(out, ckpt.norm ? 1 : 0);
    if (ckpt.norm) {
        const auto& n = *ckpt.norm;
        put_u8(out, n.mode == data::NormMode::zscore ? 0 : 1);
        put_u64(out, n.p1.size());
        put_f64s(out, n.p1);
        put_f64s(out, n.p2);
        out.write(reinterpret_cast<const char*>(n.degenerate.data()),
                  static_cast<std::streamsize>(n.degenerate.size()));
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string magic;
    std::getline(in, magic);
    if (magic != kCheckpointMagic) {
        throw std::runtime_error("load_checkpoint: bad header '" + magic + "' in " + path +
                                 " (expected " + kCheckpointMagic + ")");
    }
    Checkpoint ckpt;
    ckpt.config_snapshot = get_str(in);
    const std::uint64_t n_entries = get_u64(in);
    for (std::uint64_t i = 0; i < n_entries; ++i) {
        const std::string name = get_str(in);
        const bool trainable = get_u8(in) != 0;
        Tensor value = get_tensor(in);
        ckpt.store.add(name, std::move(value), trainable);
        if (trainable) {
            Tensor m = get_tensor(in);
            Tensor v = get_tensor(in);
            auto& e = ckpt.store.entries().back();
            e.m = std::move(m);
            e.v = std::move(v);
        }
    }
    ckpt.store.set_step_count(get_i64(in));
    if (get_u8(in)) {
        rbm::RbmChains c;
        c.C = get_i64(in);
        c.K = get_i64(in);
        c.L = get_i64(in);
        c.sweep_count = get_i64(in);
        c.v.resize(static_cast<std::size_t>(c.C * c.K));
        c.h.resize(static_cast<std::size_t>(c.C * c.L));
        in.read(reinterpret_cast<char*>(c.v.data()), static_cast<std::streamsize>(c.v.size()));
        in.read(reinterpret_cast<char*>(c.h.data()), static_cast<std::streamsize>(c.h.size()));
        ckpt.chains = std::move(c);
    }
    if (get_u8(in)) {
        data::NormStats n;
        n.mode = get_u8(in) == 0 ? data::NormMode::zscore : data::NormMode::minmax;
        const std::uint64_t ch = get_u64(in);
        n.p1 = get_f64s(in, ch);
        n.p2 = get_f64s(in, ch);
        n.degenerate.resize(ch);
        in.read(reinterpret_cast<char*>(n.degenerate.data()), static_cast<std::streamsize>(ch));
        ckpt.norm = std::move(n);
    }
    if (!in) throw std::runtime_error("load_checkpoint: truncated file " + path);
    return ckpt;
}

}  // namespace lpad
