#pragma once
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "evr/nn/tensor.hpp"

namespace evr::nn {

// Named parameters with optimizer slots, plus non-learned buffers
// (batch-norm running statistics). std::map keeps iteration order stable so
// optimizer sweeps and checkpoints are deterministic.
template <class T>
struct ParamStoreT {
    struct Entry {
        TensorT<T> value, grad, momentum, rms;
    };
    std::map<std::string, Entry> params;
    std::map<std::string, TensorT<T>> buffers;
    std::map<std::string, std::string> metadata;

    TensorT<T>& declare(const std::string& name, std::vector<int> shape) {
        if (params.count(name)) throw Error("param store: duplicate name " + name);
        Entry e;
        e.value = TensorT<T>::zeros(shape);
        e.grad = TensorT<T>::zeros(shape);
        e.momentum = TensorT<T>::zeros(shape);
        e.rms = TensorT<T>::zeros(std::move(shape));
        params.emplace(name, std::move(e));
        return params.at(name).value;
    }
    TensorT<T>& buffer(const std::string& name, std::vector<int> shape_if_new = {}) {
        auto it = buffers.find(name);
        if (it == buffers.end()) {
            if (shape_if_new.empty()) throw Error("param store: unknown buffer " + name);
            it = buffers.emplace(name, TensorT<T>::zeros(std::move(shape_if_new))).first;
        }
        return it->second;
    }
    Entry& entry(const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw Error("param store: unknown param " + name);
        return it->second;
    }
    TensorT<T>& value(const std::string& name) { return entry(name).value; }
    TensorT<T>& grad(const std::string& name) { return entry(name).grad; }

    void zero_grad() {
        for (auto& [k, e] : params) {
            (void)k;
            std::fill(e.grad.data.begin(), e.grad.data.end(), T(0));
        }
    }
    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [k, e] : params) {
            (void)k;
            n += e.value.numel();
        }
        return n;
    }
};

// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order by construction; backward() walks it in reverse.
template <class T>
class TapeT {
public:
    struct Node {
        TensorT<T> value;
        TensorT<T> grad; // allocated lazily during backward
        bool requires_grad = false;
        const char* op = "leaf";
        std::function<void(TapeT&, int)> back; // empty for leaves
    };
    struct ParamRef {
        int node;
        ParamStoreT<T>* store;
        std::string name;
    };
    struct BnUpdate {
        ParamStoreT<T>* store;
        std::string base; // buffers base.rm / base.rv
        std::vector<T> mean, var;
    };

    std::vector<Node> nodes;
    std::vector<ParamRef> param_refs;
    std::vector<BnUpdate> bn_updates;

    int leaf(TensorT<T> v, bool requires_grad = false) {
        Node n;
        n.value = std::move(v);
        n.requires_grad = requires_grad;
        nodes.push_back(std::move(n));
        return int(nodes.size()) - 1;
    }

    int param(ParamStoreT<T>& store, const std::string& name) {
        int id = leaf(store.value(name), true);
        param_refs.push_back({id, &store, name});
        return id;
    }

    int make(const char* op, TensorT<T> value, std::vector<int> parents,
             std::function<void(TapeT&, int)> back) {
        bool rg = false;
        for (int p : parents) rg = rg || nodes[std::size_t(p)].requires_grad;
        Node n;
        n.value = std::move(value);
        n.requires_grad = rg;
        n.op = op;
        if (rg) n.back = std::move(back);
        nodes.push_back(std::move(n));
        return int(nodes.size()) - 1;
    }

    const TensorT<T>& val(int id) const { return nodes[std::size_t(id)].value; }
    TensorT<T>& val_mut(int id) { return nodes[std::size_t(id)].value; }

    TensorT<T>& grad(int id) {
        Node& n = nodes[std::size_t(id)];
        if (n.grad.numel() == 0) n.grad = TensorT<T>::zeros(n.value.shape);
        return n.grad;
    }
    bool has_grad(int id) const { return nodes[std::size_t(id)].grad.numel() != 0; }

    void add_grad(int id, const TensorT<T>& g) {
        TensorT<T>& dst = grad(id);
        require_same_shape(dst, g, "add_grad");
        for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
    }

    // Backward from a scalar root; accumulates parameter gradients into the
    // bound stores (+=, so batches can accumulate across tapes).
    void backward(int root) {
        if (val(root).numel() != 1) throw ShapeError("backward: root must be a scalar");
        grad(root)[0] = T(1);
        for (int id = root; id >= 0; --id) {
            Node& n = nodes[std::size_t(id)];
            if (!n.requires_grad || !n.back || n.grad.numel() == 0) continue;
            n.back(*this, id);
        }
        for (const auto& ref : param_refs) {
            if (!has_grad(ref.node)) continue;
            TensorT<T>& g = ref.store->grad(ref.name);
            const TensorT<T>& ng = grad(ref.node);
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += ng[i];
        }
    }

    // Fold recorded batch-norm statistics into running buffers, in the order
    // the forward passes happened.
    void flush_bn(double momentum) {
        for (const auto& u : bn_updates) {
            TensorT<T>& rm = u.store->buffer(u.base + ".rm");
            TensorT<T>& rv = u.store->buffer(u.base + ".rv");
            for (std::size_t c = 0; c < u.mean.size(); ++c) {
                rm[c] = T((1.0 - momentum) * rm[c] + momentum * u.mean[c]);
                rv[c] = T((1.0 - momentum) * rv[c] + momentum * u.var[c]);
            }
        }
        bn_updates.clear();
    }
};

// ---- optimizers ----

template <class T>
void sgd_step(ParamStoreT<T>& store, double lr, double momentum, double weight_decay) {
    for (auto& [name, e] : store.params) {
        (void)name;
        for (std::size_t i = 0; i < e.value.numel(); ++i) {
            T g = e.grad[i] + T(weight_decay) * e.value[i];
            e.momentum[i] = T(momentum) * e.momentum[i] + g;
            e.value[i] -= T(lr) * e.momentum[i];
        }
    }
}

template <class T>
void rmsprop_step(ParamStoreT<T>& store, double lr, double alpha, double eps) {
    for (auto& [name, e] : store.params) {
        (void)name;
        for (std::size_t i = 0; i < e.value.numel(); ++i) {
            T g = e.grad[i];
            e.rms[i] = T(alpha) * e.rms[i] + T(1.0 - alpha) * g * g;
            e.value[i] -= T(lr) * g / (std::sqrt(e.rms[i]) + T(eps));
        }
    }
}

template <class T>
void scale_grads(ParamStoreT<T>& store, double s) {
    for (auto& [name, e] : store.params) {
        (void)name;
        for (auto& g : e.grad.data) g *= T(s);
    }
}

template <class T>
bool grads_finite(const ParamStoreT<T>& store) {
    for (const auto& [name, e] : store.params) {
        (void)name;
        for (T g : e.grad.data)
            if (!std::isfinite(double(g))) return false;
    }
    return true;
}

// ---- checkpoint io ----
// Layout: magic "EVRCKPT1", u8 scalar size, metadata, then four named-tensor
// sections (values, buffers, momentum, rms). All integers little-endian;
// tensor payloads are raw scalar arrays.

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                          (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("checkpoint: truncated file");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}
inline void put_str(std::ostream& out, const std::string& s) {
    put_u32(out, std::uint32_t(s.size()));
    out.write(s.data(), std::streamsize(s.size()));
}
inline std::string get_str(std::istream& in) {
    std::uint32_t n = get_u32(in);
    if (n > (1u << 20)) throw IoError("checkpoint: unreasonable string length");
    std::string s(n, '\0');
    in.read(s.data(), std::streamsize(n));
    if (!in) throw IoError("checkpoint: truncated file");
    return s;
}

template <class T>
void put_tensor(std::ostream& out, const std::string& name, const TensorT<T>& t) {
    put_str(out, name);
    put_u32(out, std::uint32_t(t.shape.size()));
    for (int d : t.shape) put_u32(out, std::uint32_t(d));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              std::streamsize(t.data.size() * sizeof(T)));
}

template <class T>
std::pair<std::string, TensorT<T>> get_tensor(std::istream& in) {
    std::string name = get_str(in);
    std::uint32_t nd = get_u32(in);
    if (nd > 8) throw IoError("checkpoint: unreasonable rank");
    std::vector<int> shape;
    for (std::uint32_t i = 0; i < nd; ++i) shape.push_back(int(get_u32(in)));
    TensorT<T> t = TensorT<T>::zeros(shape);
    in.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(t.data.size() * sizeof(T)));
    if (!in) throw IoError("checkpoint: truncated tensor payload");
    return {name, std::move(t)};
}

} // namespace detail

template <class T>
void save_checkpoint(const ParamStoreT<T>& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out.write("EVRCKPT1", 8);
    unsigned char sz = sizeof(T);
    out.write(reinterpret_cast<char*>(&sz), 1);
    detail::put_u32(out, std::uint32_t(store.metadata.size()));
    for (const auto& [k, v] : store.metadata) {
        detail::put_str(out, k);
        detail::put_str(out, v);
    }
    detail::put_u32(out, std::uint32_t(store.params.size()));
    for (const auto& [k, e] : store.params) detail::put_tensor(out, k, e.value);
    detail::put_u32(out, std::uint32_t(store.buffers.size()));
    for (const auto& [k, b] : store.buffers) detail::put_tensor(out, k, b);
    detail::put_u32(out, std::uint32_t(store.params.size()));
    for (const auto& [k, e] : store.params) detail::put_tensor(out, k, e.momentum);
    detail::put_u32(out, std::uint32_t(store.params.size()));
    for (const auto& [k, e] : store.params) detail::put_tensor(out, k, e.rms);
    if (!out) throw IoError("save_checkpoint: write failure on " + path);
}

template <class T>
ParamStoreT<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "EVRCKPT1", 8) != 0)
        throw IoError("load_checkpoint: bad magic in " + path);
    unsigned char sz = 0;
    in.read(reinterpret_cast<char*>(&sz), 1);
    if (sz != sizeof(T))
        throw IoError("load_checkpoint: scalar width " + std::to_string(int(sz)) +
                      " does not match expected " + std::to_string(sizeof(T)));
    ParamStoreT<T> store;
    std::uint32_t nmeta = detail::get_u32(in);
    for (std::uint32_t i = 0; i < nmeta; ++i) {
        std::string k = detail::get_str(in);
        store.metadata[k] = detail::get_str(in);
    }
    std::uint32_t np = detail::get_u32(in);
    for (std::uint32_t i = 0; i < np; ++i) {
        auto [name, t] = detail::get_tensor<T>(in);
        auto& v = store.declare(name, t.shape);
        v = std::move(t);
    }
    std::uint32_t nb = detail::get_u32(in);
    for (std::uint32_t i = 0; i < nb; ++i) {
        auto [name, t] = detail::get_tensor<T>(in);
        store.buffer(name, t.shape) = std::move(t);
    }
    std::uint32_t nm = detail::get_u32(in);
    for (std::uint32_t i = 0; i < nm; ++i) {
        auto [name, t] = detail::get_tensor<T>(in);
        store.entry(name).momentum = std::move(t);
    }
    std::uint32_t nr = detail::get_u32(in);
    for (std::uint32_t i = 0; i < nr; ++i) {
        auto [name, t] = detail::get_tensor<T>(in);
        store.entry(name).rms = std::move(t);
    }
    return store;
}

// Reads only the metadata block (stage stamps, config hash) without tensors.
std::map<std::string, std::string> read_checkpoint_metadata(const std::string& path);

} // namespace evr::nn
