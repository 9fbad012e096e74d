#pragma once

// Binary checkpoint container: an ordered list of named records, each either
// an f64 tensor or a u64 array. Doubles are stored as raw IEEE-754 bytes, so
// a save/load round trip is bit-exact (including RNG state and Adam moments,
// which makes resumed runs identical to uninterrupted ones).

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "micro/nn.hpp"
#include "micro/rng.hpp"
#include "micro/tensor.hpp"

namespace micro {

class Checkpoint {
  public:
    void put(const std::string& name, const Tensor& t) {
        insert(name, Record{0, t.rows, t.cols, t.data, {}});
    }

    void put_u64(const std::string& name, const std::vector<uint64_t>& v) {
        insert(name, Record{1, v.size(), 1, {}, v});
    }

    void put_scalar(const std::string& name, double v) { put(name, Tensor::scalar(v)); }
    void put_count(const std::string& name, uint64_t v) { put_u64(name, {v}); }

    bool has(const std::string& name) const { return records_.count(name) > 0; }

    const Tensor& tensor(const std::string& name) const {
        const Record& r = find(name);
        require(r.dtype == 0, "Checkpoint: record '" + name + "' is not an f64 tensor");
        r.view.rows = r.rows;
        r.view.cols = r.cols;
        r.view.data = r.f64;
        return r.view;
    }

    double scalar(const std::string& name) const { return tensor(name).item(); }

    const std::vector<uint64_t>& u64s(const std::string& name) const {
        const Record& r = find(name);
        require(r.dtype == 1, "Checkpoint: record '" + name + "' is not a u64 array");
        return r.u64;
    }

    uint64_t count(const std::string& name) const {
        const auto& v = u64s(name);
        require(v.size() == 1, "Checkpoint: record '" + name + "' is not a single count");
        return v[0];
    }

    // ---- composite helpers ------------------------------------------------

    void put_mlp(const std::string& prefix, const Mlp& net) {
        put_count(prefix + ".layers", net.layers.size());
        put_count(prefix + ".act", static_cast<uint64_t>(net.hidden_act));
        for (size_t i = 0; i < net.layers.size(); ++i) {
            put(prefix + ".w" + std::to_string(i), net.layers[i].w);
            put(prefix + ".b" + std::to_string(i), net.layers[i].b);
        }
    }

    Mlp mlp(const std::string& prefix) const {
        Mlp net;
        net.hidden_act = static_cast<Act>(count(prefix + ".act"));
        const uint64_t n = count(prefix + ".layers");
        for (uint64_t i = 0; i < n; ++i)
            net.layers.push_back(Dense{tensor(prefix + ".w" + std::to_string(i)),
                                       tensor(prefix + ".b" + std::to_string(i))});
        return net;
    }

    void put_adam(const std::string& prefix, const MlpAdam& opt) {
        put_count(prefix + ".n", opt.ws.size());
        for (size_t i = 0; i < opt.ws.size(); ++i) {
            put(prefix + ".wm" + std::to_string(i), opt.ws[i].m);
            put(prefix + ".wv" + std::to_string(i), opt.ws[i].v);
            put(prefix + ".bm" + std::to_string(i), opt.bs[i].m);
            put(prefix + ".bv" + std::to_string(i), opt.bs[i].v);
            put_count(prefix + ".wstep" + std::to_string(i), opt.ws[i].step);
            put_count(prefix + ".bstep" + std::to_string(i), opt.bs[i].step);
        }
    }

    MlpAdam adam(const std::string& prefix) const {
        MlpAdam opt;
        const uint64_t n = count(prefix + ".n");
        for (uint64_t i = 0; i < n; ++i) {
            AdamState w, b;
            w.m = tensor(prefix + ".wm" + std::to_string(i));
            w.v = tensor(prefix + ".wv" + std::to_string(i));
            w.step = count(prefix + ".wstep" + std::to_string(i));
            b.m = tensor(prefix + ".bm" + std::to_string(i));
            b.v = tensor(prefix + ".bv" + std::to_string(i));
            b.step = count(prefix + ".bstep" + std::to_string(i));
            opt.ws.push_back(std::move(w));
            opt.bs.push_back(std::move(b));
        }
        return opt;
    }

    void put_rng(const std::string& name, const Rng& rng) {
        const auto s = rng.state();
        put_u64(name, {s[0], s[1], s[2], s[3]});
    }

    Rng rng(const std::string& name) const {
        const auto& v = u64s(name);
        require(v.size() == 4, "Checkpoint: RNG record '" + name + "' has wrong length");
        Rng r;
        r.set_state({v[0], v[1], v[2], v[3]});
        return r;
    }

    // ---- file IO ----------------------------------------------------------

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        require(out.good(), "Checkpoint::save: cannot open " + path);
        out.write(kMagic, 8);
        write_u64(out, names_.size());
        for (const auto& name : names_) {
            const Record& r = records_.at(name);
            out.put(static_cast<char>(r.dtype));
            write_u64(out, name.size());
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u64(out, r.rows);
            write_u64(out, r.cols);
            if (r.dtype == 0)
                out.write(reinterpret_cast<const char*>(r.f64.data()),
                          static_cast<std::streamsize>(r.f64.size() * sizeof(double)));
            else
                out.write(reinterpret_cast<const char*>(r.u64.data()),
                          static_cast<std::streamsize>(r.u64.size() * sizeof(uint64_t)));
        }
        require(out.good(), "Checkpoint::save: write failed for " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        require(in.good(), "Checkpoint::load: cannot open " + path);
        char magic[8];
        in.read(magic, 8);
        require(in.good() && std::memcmp(magic, kMagic, 8) == 0,
                "Checkpoint::load: " + path + " is not a checkpoint file");
        Checkpoint ck;
        const uint64_t n = read_u64(in);
        for (uint64_t i = 0; i < n; ++i) {
            Record r;
            r.dtype = static_cast<uint8_t>(in.get());
            require(r.dtype <= 1, "Checkpoint::load: unknown record type");
            const uint64_t len = read_u64(in);
            std::string name(len, '\0');
            in.read(name.data(), static_cast<std::streamsize>(len));
            r.rows = read_u64(in);
            r.cols = read_u64(in);
            if (r.dtype == 0) {
                r.f64.resize(r.rows * r.cols);
                in.read(reinterpret_cast<char*>(r.f64.data()),
                        static_cast<std::streamsize>(r.f64.size() * sizeof(double)));
            } else {
                r.u64.resize(r.rows);
                in.read(reinterpret_cast<char*>(r.u64.data()),
                        static_cast<std::streamsize>(r.u64.size() * sizeof(uint64_t)));
            }
            require(in.good(), "Checkpoint::load: truncated file " + path);
            ck.insert(name, std::move(r));
        }
        return ck;
    }

    const std::vector<std::string>& names() const { return names_; }

  private:
    struct Record {
        uint8_t dtype = 0;  // 0 = f64 tensor, 1 = u64 array (rows = length)
        size_t rows = 0, cols = 0;
        Vec f64;
        std::vector<uint64_t> u64;
        mutable Tensor view;
    };

    static constexpr const char kMagic[9] = "MICROCK1";

    void insert(const std::string& name, Record r) {
        require_arg(!name.empty(), "Checkpoint: empty record name");
        if (!records_.count(name)) names_.push_back(name);
        records_[name] = std::move(r);
    }

    const Record& find(const std::string& name) const {
        auto it = records_.find(name);
        require(it != records_.end(), "Checkpoint: missing record '" + name + "'");
        return it->second;
    }

    static void write_u64(std::ofstream& out, uint64_t v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }

    static uint64_t read_u64(std::ifstream& in) {
        uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        return v;
    }

    std::vector<std::string> names_;
    std::map<std::string, Record> records_;
};

}  // namespace micro
