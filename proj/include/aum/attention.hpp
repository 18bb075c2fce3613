#pragma once

#include <memory>
#include <random>

#include "aum/ops.hpp"

namespace aum {

// Minimal pre-norm multi-head self-attention + MLP block, the quadratic
// baseline for the scaling bench. The n x n score matrix is materialized
// per head and the post-softmax weights are kept for the backward pass.

template <class T>
Val<T> multihead_attention(Val<T> q, Val<T> k, Val<T> v, std::size_t heads) {
    Tape<T>& t = *q.tape;
    const Array<T>& qv = q.v();
    std::size_t n = qv.rows(), d = qv.cols();
    if (d % heads != 0)
        throw ConfigError("attention: dim " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    detail::require_same_shape(qv, k.v(), "attention q/k");
    detail::require_same_shape(qv, v.v(), "attention q/v");
    std::size_t dh = d / heads;
    T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

    auto probs = std::make_shared<Array<T>>(std::vector<std::size_t>{heads, n, n});
    Array<T> out({n, d});
    for (std::size_t h = 0; h < heads; ++h) {
        T* p = probs->data.data() + h * n * n;
        // scores = Qh Kh^T / sqrt(dh), head slices addressed by stride d
        gemm(false, true, (int)n, (int)n, (int)dh, inv_sqrt, qv.data.data() + h * dh, (int)d,
             k.v().data.data() + h * dh, (int)d, T(0), p, (int)n);
        for (std::size_t r = 0; r < n; ++r) {
            T* row = p + r * n;
            T mx = *std::max_element(row, row + n);
            T s = T(0);
            for (std::size_t j = 0; j < n; ++j) s += (row[j] = std::exp(row[j] - mx));
            for (std::size_t j = 0; j < n; ++j) row[j] /= s;
        }
        gemm(false, false, (int)n, (int)dh, (int)n, T(1), p, (int)n,
             v.v().data.data() + h * dh, (int)d, T(0), out.data.data() + h * dh, (int)d);
    }

    auto back = [pq = q.id, pk = k.id, pv = v.id, heads, n, d, dh, inv_sqrt, probs](
                    Tape<T>& t, const Array<T>& g, std::size_t) {
        const Array<T>& qv = t.value(pq);
        const Array<T>& kv = t.value(pk);
        const Array<T>& vv = t.value(pv);
        Array<T> dS({n, n});
        for (std::size_t h = 0; h < heads; ++h) {
            const T* p = probs->data.data() + h * n * n;
            // dP = g_h V_h^T, then softmax backward into dS
            gemm(false, true, (int)n, (int)n, (int)dh, T(1), g.data.data() + h * dh, (int)d,
                 vv.data.data() + h * dh, (int)d, T(0), dS.data.data(), (int)n);
            for (std::size_t r = 0; r < n; ++r) {
                const T* prow = p + r * n;
                T* srow = dS.data.data() + r * n;
                T dot = T(0);
                for (std::size_t j = 0; j < n; ++j) dot += srow[j] * prow[j];
                for (std::size_t j = 0; j < n; ++j) srow[j] = prow[j] * (srow[j] - dot);
            }
            if (t.needs_grad(pv))
                gemm(true, false, (int)n, (int)dh, (int)n, T(1), p, (int)n,
                     g.data.data() + h * dh, (int)d, T(1),
                     t.grad_buf(pv).data.data() + h * dh, (int)d);
            if (t.needs_grad(pq))
                gemm(false, false, (int)n, (int)dh, (int)n, inv_sqrt, dS.data.data(), (int)n,
                     kv.data.data() + h * dh, (int)d, T(1),
                     t.grad_buf(pq).data.data() + h * dh, (int)d);
            if (t.needs_grad(pk))
                gemm(true, false, (int)n, (int)dh, (int)n, inv_sqrt, dS.data.data(), (int)n,
                     qv.data.data() + h * dh, (int)d, T(1),
                     t.grad_buf(pk).data.data() + h * dh, (int)d);
        }
    };
    return t.make_node(std::move(out), {q.id, k.id, v.id}, std::move(back));
}

template <class T>
struct AttnBlockWeights {
    std::size_t heads = 6;
    Array<T> ln1_g, ln1_b;         // [D]
    Array<T> wq, bq, wk, bk, wv, bv;  // [D,D], [D]
    Array<T> wo, bo;               // [D,D], [D]
    Array<T> ln2_g, ln2_b;         // [D]
    Array<T> w1, b1;               // [D,4D], [4D]
    Array<T> w2, b2;               // [4D,D], [D]
};

template <class T>
AttnBlockWeights<T> init_attn_block(std::size_t d, std::size_t heads, std::mt19937& rng) {
    AttnBlockWeights<T> w;
    w.heads = heads;
    auto lin = [&rng](std::size_t in, std::size_t out) {
        Array<T> a({in, out});
        T b = T(1) / std::sqrt(static_cast<T>(in));
        fill_uniform(a, rng, -b, b);
        return a;
    };
    w.ln1_g = Array<T>::full({d}, T(1));
    w.ln1_b = Array<T>({d});
    w.wq = lin(d, d);
    w.bq = Array<T>({d});
    w.wk = lin(d, d);
    w.bk = Array<T>({d});
    w.wv = lin(d, d);
    w.bv = Array<T>({d});
    w.wo = lin(d, d);
    w.bo = Array<T>({d});
    w.ln2_g = Array<T>::full({d}, T(1));
    w.ln2_b = Array<T>({d});
    w.w1 = lin(d, 4 * d);
    w.b1 = Array<T>({4 * d});
    w.w2 = lin(4 * d, d);
    w.b2 = Array<T>({d});
    return w;
}

template <class T>
struct AttnBlockVals {
    std::size_t heads = 6;
    Val<T> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

template <class T>
AttnBlockVals<T> bind(Tape<T>& t, AttnBlockWeights<T>& w, bool rg = true) {
    return AttnBlockVals<T>{w.heads,
                            t.leaf(w.ln1_g, rg), t.leaf(w.ln1_b, rg), t.leaf(w.wq, rg),
                            t.leaf(w.bq, rg),    t.leaf(w.wk, rg),    t.leaf(w.bk, rg),
                            t.leaf(w.wv, rg),    t.leaf(w.bv, rg),    t.leaf(w.wo, rg),
                            t.leaf(w.bo, rg),    t.leaf(w.ln2_g, rg), t.leaf(w.ln2_b, rg),
                            t.leaf(w.w1, rg),    t.leaf(w.b1, rg),    t.leaf(w.w2, rg),
                            t.leaf(w.b2, rg)};
}

template <class T>
Val<T> attention_block_forward(Val<T> x, const AttnBlockVals<T>& w) {
    Val<T> xn = layer_norm(x, w.ln1_g, w.ln1_b);
    Val<T> attn = multihead_attention(linear(xn, w.wq, w.bq), linear(xn, w.wk, w.bk),
                                      linear(xn, w.wv, w.bv), w.heads);
    Val<T> h = add(x, linear(attn, w.wo, w.bo));
    Val<T> hn = layer_norm(h, w.ln2_g, w.ln2_b);
    return add(h, linear(silu(linear(hn, w.w1, w.b1)), w.w2, w.b2));
}

}  // namespace aum
