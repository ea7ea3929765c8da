#include "rpt/ops.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace rpt::ops {

namespace {

using detail::Node;
using detail::ensure_grad;

std::shared_ptr<Node> make_result(Shape shape, std::vector<double> data) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    return node;
}

// Attach tape bookkeeping to a result node if any input wants gradients.
template <typename Fn>
Tensor finish(std::shared_ptr<Node> out, std::initializer_list<Tensor> inputs, Fn&& backprop) {
    bool needs = false;
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
    if (needs && GradMode::enabled()) {
        out->requires_grad = true;
        for (const Tensor& t : inputs) out->parents.push_back(t.node());
        out->backprop = std::forward<Fn>(backprop);
    }
    return Tensor(std::move(out));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got " + shape_to_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t r = a.extent(0), k = a.extent(1), c = b.extent(1);
    if (b.extent(0) != k) {
        throw DimensionError("matmul: inner extents differ, " + shape_to_string(a.shape()) +
                             " x " + shape_to_string(b.shape()));
    }
    std::vector<double> out(r * c, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < r; ++i) {
        double* oi = out.data() + i * c;
        const double* ai = pa + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ai[kk];
            if (av == 0.0) continue;
            const double* bk = pb + kk * c;
            for (std::size_t j = 0; j < c; ++j) oi[j] += av * bk[j];
        }
    }
    auto node = make_result({r, c}, std::move(out));
    return finish(node, {a, b}, [a, b, r, k, c](Node& n) {
        const double* g = n.grad.data();
        if (a.requires_grad()) {
            double* da = ensure_grad(*a.node()).data();
            const double* pb = b.data().data();
            for (std::size_t i = 0; i < r; ++i) {
                const double* gi = g + i * c;
                double* dai = da + i * k;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double* bk = pb + kk * c;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < c; ++j) acc += gi[j] * bk[j];
                    dai[kk] += acc;
                }
            }
        }
        if (b.requires_grad()) {
            double* db = ensure_grad(*b.node()).data();
            const double* pa = a.data().data();
            for (std::size_t i = 0; i < r; ++i) {
                const double* gi = g + i * c;
                const double* ai = pa + i * k;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double av = ai[kk];
                    if (av == 0.0) continue;
                    double* dbk = db + kk * c;
                    for (std::size_t j = 0; j < c; ++j) dbk[j] += av * gi[j];
                }
            }
        }
    });
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_bt");
    require_rank(b, 2, "matmul_bt");
    const std::size_t r = a.extent(0), k = a.extent(1), c = b.extent(0);
    if (b.extent(1) != k) {
        throw DimensionError("matmul_bt: inner extents differ, " + shape_to_string(a.shape()) +
                             " x " + shape_to_string(b.shape()) + "^T");
    }
    std::vector<double> out(r * c, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < r; ++i) {
        const double* ai = pa + i * k;
        double* oi = out.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) {
            const double* bj = pb + j * k;
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
            oi[j] = acc;
        }
    }
    auto node = make_result({r, c}, std::move(out));
    return finish(node, {a, b}, [a, b, r, k, c](Node& n) {
        const double* g = n.grad.data();
        if (a.requires_grad()) {
            double* da = ensure_grad(*a.node()).data();
            const double* pb = b.data().data();
            for (std::size_t i = 0; i < r; ++i) {
                const double* gi = g + i * c;
                double* dai = da + i * k;
                for (std::size_t j = 0; j < c; ++j) {
                    const double gv = gi[j];
                    if (gv == 0.0) continue;
                    const double* bj = pb + j * k;
                    for (std::size_t kk = 0; kk < k; ++kk) dai[kk] += gv * bj[kk];
                }
            }
        }
        if (b.requires_grad()) {
            double* db = ensure_grad(*b.node()).data();
            const double* pa = a.data().data();
            for (std::size_t i = 0; i < r; ++i) {
                const double* gi = g + i * c;
                const double* ai = pa + i * k;
                for (std::size_t j = 0; j < c; ++j) {
                    const double gv = gi[j];
                    if (gv == 0.0) continue;
                    double* dbj = db + j * k;
                    for (std::size_t kk = 0; kk < k; ++kk) dbj[kk] += gv * ai[kk];
                }
            }
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
    auto node = make_result(a.shape(), std::move(out));
    return finish(node, {a, b}, [a, b](Node& n) {
        for (const Tensor& t : {a, b}) {
            if (!t.requires_grad()) continue;
            double* d = ensure_grad(*t.node()).data();
            const double* g = n.grad.data();
            for (std::size_t i = 0; i < n.grad.size(); ++i) d[i] += g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
    auto node = make_result(a.shape(), std::move(out));
    return finish(node, {a, b}, [a, b](Node& n) {
        const double* g = n.grad.data();
        if (a.requires_grad()) {
            double* da = ensure_grad(*a.node()).data();
            const double* pb = b.data().data();
            for (std::size_t i = 0; i < n.grad.size(); ++i) da[i] += g[i] * pb[i];
        }
        if (b.requires_grad()) {
            double* db = ensure_grad(*b.node()).data();
            const double* pa = a.data().data();
            for (std::size_t i = 0; i < n.grad.size(); ++i) db[i] += g[i] * pa[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    const double* pa = a.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * s;
    auto node = make_result(a.shape(), std::move(out));
    return finish(node, {a}, [a, s](Node& n) {
        double* da = ensure_grad(*a.node()).data();
        const double* g = n.grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) da[i] += g[i] * s;
    });
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
    require_rank(x, 2, "add_rowwise");
    require_rank(bias, 1, "add_rowwise");
    const std::size_t r = x.extent(0), c = x.extent(1);
    if (bias.extent(0) != c) {
        throw DimensionError("add_rowwise: bias " + shape_to_string(bias.shape()) +
                             " does not match row width of " + shape_to_string(x.shape()));
    }
    std::vector<double> out(x.size());
    const double* px = x.data().data();
    const double* pb = bias.data().data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = px[i * c + j] + pb[j];
    auto node = make_result(x.shape(), std::move(out));
    return finish(node, {x, bias}, [x, bias, r, c](Node& n) {
        const double* g = n.grad.data();
        if (x.requires_grad()) {
            double* dx = ensure_grad(*x.node()).data();
            for (std::size_t i = 0; i < r * c; ++i) dx[i] += g[i];
        }
        if (bias.requires_grad()) {
            double* db = ensure_grad(*bias.node()).data();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) db[j] += g[i * c + j];
        }
    });
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    const double* px = x.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] > 0.0 ? px[i] : 0.0;
    auto node = make_result(x.shape(), std::move(out));
    return finish(node, {x}, [x](Node& n) {
        double* dx = ensure_grad(*x.node()).data();
        const double* g = n.grad.data();
        const double* px = x.data().data();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (px[i] > 0.0) dx[i] += g[i];
    });
}

Tensor tanh(const Tensor& x) {
    std::vector<double> out(x.size());
    const double* px = x.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(px[i]);
    auto node = make_result(x.shape(), std::move(out));
    std::vector<double> y = node->data;
    return finish(node, {x}, [x, y = std::move(y)](Node& n) {
        double* dx = ensure_grad(*x.node()).data();
        const double* g = n.grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    const double* px = x.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-px[i]));
    auto node = make_result(x.shape(), std::move(out));
    std::vector<double> y = node->data;
    return finish(node, {x}, [x, y = std::move(y)](Node& n) {
        double* dx = ensure_grad(*x.node()).data();
        const double* g = n.grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() != 1 && x.rank() != 2) {
        throw DimensionError("layer_norm: expected rank 1 or 2, got " +
                             shape_to_string(x.shape()));
    }
    const std::size_t d = x.shape().back();
    if (d == 0) throw DimensionError("layer_norm: zero-width rows");
    const std::size_t rows = x.size() / d;
    require_rank(gamma, 1, "layer_norm");
    require_rank(beta, 1, "layer_norm");
    if (gamma.extent(0) != d || beta.extent(0) != d) {
        throw DimensionError("layer_norm: gamma/beta width does not match " +
                             shape_to_string(x.shape()));
    }

    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    const double* px = x.data().data();
    const double* pg = gamma.data().data();
    const double* pb = beta.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mean) * inv;
            xhat[r * d + j] = h;
            out[r * d + j] = h * pg[j] + pb[j];
        }
    }
    auto node = make_result(x.shape(), std::move(out));
    return finish(node, {x, gamma, beta},
                  [x, gamma, beta, rows, d, xhat = std::move(xhat),
                   inv_std = std::move(inv_std)](Node& n) {
        const double* g = n.grad.data();
        const double* pg = gamma.data().data();
        if (gamma.requires_grad()) {
            double* dg = ensure_grad(*gamma.node()).data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) dg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (beta.requires_grad()) {
            double* db = ensure_grad(*beta.node()).data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) db[j] += g[r * d + j];
        }
        if (x.requires_grad()) {
            double* dx = ensure_grad(*x.node()).data();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* grow = g + r * d;
                const double* hrow = xhat.data() + r * d;
                double sum_dh = 0.0, sum_dh_h = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dh = grow[j] * pg[j];
                    sum_dh += dh;
                    sum_dh_h += dh * hrow[j];
                }
                const double inv = inv_std[r];
                const double m1 = sum_dh / static_cast<double>(d);
                const double m2 = sum_dh_h / static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const double dh = grow[j] * pg[j];
                    dx[r * d + j] += inv * (dh - m1 - hrow[j] * m2);
                }
            }
        }
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of rank " +
                             std::to_string(x.rank()));
    }
    const Shape& shape = x.shape();
    const std::size_t n = shape[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

    std::vector<double> out(x.size());
    const double* px = x.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double mx = px[base];
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, px[base + i * inner]);
            double denom = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = std::exp(px[base + i * inner] - mx);
                out[base + i * inner] = e;
                denom += e;
            }
            for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= denom;
        }
    }
    auto node = make_result(shape, std::move(out));
    std::vector<double> y = node->data;
    return finish(node, {x}, [x, outer, n, inner, y = std::move(y)](Node& grad_node) {
        double* dx = ensure_grad(*x.node()).data();
        const double* g = grad_node.grad.data();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t idx = base + i * inner;
                    dx[idx] += y[idx] * (g[idx] - dot);
                }
            }
        }
    });
}

Tensor masked_rows_softmax(const Tensor& x, const std::vector<std::uint8_t>& keep) {
    require_rank(x, 2, "masked_rows_softmax");
    const std::size_t r = x.extent(0), c = x.extent(1);
    if (keep.size() != r * c) {
        throw DimensionError("masked_rows_softmax: mask size " + std::to_string(keep.size()) +
                             " does not match " + shape_to_string(x.shape()));
    }
    std::vector<double> out(x.size(), 0.0);
    const double* px = x.data().data();
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = px + i * c;
        const std::uint8_t* krow = keep.data() + i * c;
        double mx = 0.0;
        bool any = false;
        for (std::size_t j = 0; j < c; ++j) {
            if (!krow[j]) continue;
            mx = any ? std::max(mx, row[j]) : row[j];
            any = true;
        }
        if (!any) throw ContractError("masked_rows_softmax: row " + std::to_string(i) +
                                      " has no kept entries");
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (!krow[j]) continue;
            const double e = std::exp(row[j] - mx);
            out[i * c + j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < c; ++j)
            if (krow[j]) out[i * c + j] /= denom;
    }
    auto node = make_result(x.shape(), std::move(out));
    std::vector<double> y = node->data;
    return finish(node, {x}, [x, r, c, keep, y = std::move(y)](Node& n) {
        double* dx = ensure_grad(*x.node()).data();
        const double* g = n.grad.data();
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                if (keep[i * c + j]) dot += g[i * c + j] * y[i * c + j];
            }
            for (std::size_t j = 0; j < c; ++j) {
                const std::size_t idx = i * c + j;
                if (keep[idx]) dx[idx] += y[idx] * (g[idx] - dot);
            }
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
    require_rank(logits, 1, "cross_entropy");
    const std::size_t c = logits.extent(0);
    if (target >= c) {
        throw IndexError("cross_entropy: target " + std::to_string(target) +
                         " out of range for " + std::to_string(c) + " classes");
    }
    const double* pl = logits.data().data();
    double mx = pl[0];
    for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, pl[i]);
    double denom = 0.0;
    std::vector<double> probs(c);
    for (std::size_t i = 0; i < c; ++i) {
        probs[i] = std::exp(pl[i] - mx);
        denom += probs[i];
    }
    for (std::size_t i = 0; i < c; ++i) probs[i] /= denom;
    const double loss = std::log(denom) + mx - pl[target];
    auto node = make_result({1}, {loss});
    return finish(node, {logits}, [logits, target, probs = std::move(probs)](Node& n) {
        double* dl = ensure_grad(*logits.node()).data();
        const double g = n.grad[0];
        for (std::size_t i = 0; i < probs.size(); ++i) {
            dl[i] += g * (probs[i] - (i == target ? 1.0 : 0.0));
        }
    });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) {
    require_rank(table, 2, "embedding_lookup");
    const std::size_t v = table.extent(0), d = table.extent(1);
    for (std::size_t id : ids) {
        if (id >= v) {
            throw IndexError("embedding_lookup: id " + std::to_string(id) +
                             " out of vocabulary size " + std::to_string(v));
        }
    }
    std::vector<double> out(ids.size() * d);
    const double* pt = table.data().data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* row = pt + ids[i] * d;
        std::copy(row, row + d, out.data() + i * d);
    }
    auto node = make_result({ids.size(), d}, std::move(out));
    return finish(node, {table}, [table, ids, d](Node& n) {
        double* dt = ensure_grad(*table.node()).data();
        const double* g = n.grad.data();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            double* row = dt + ids[i] * d;
            const double* gi = g + i * d;
            for (std::size_t j = 0; j < d; ++j) row[j] += gi[j];
        }
    });
}

Tensor concat_seq(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "concat_seq");
    require_rank(b, 2, "concat_seq");
    if (a.extent(1) != b.extent(1)) {
        throw DimensionError("concat_seq: row widths differ, " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
    }
    const std::size_t n1 = a.extent(0), n2 = b.extent(0), d = a.extent(1);
    std::vector<double> out;
    out.reserve((n1 + n2) * d);
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    auto node = make_result({n1 + n2, d}, std::move(out));
    return finish(node, {a, b}, [a, b, n1, n2, d](Node& n) {
        const double* g = n.grad.data();
        if (a.requires_grad()) {
            double* da = ensure_grad(*a.node()).data();
            for (std::size_t i = 0; i < n1 * d; ++i) da[i] += g[i];
        }
        if (b.requires_grad()) {
            double* db = ensure_grad(*b.node()).data();
            for (std::size_t i = 0; i < n2 * d; ++i) db[i] += g[n1 * d + i];
        }
    });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "concat_cols");
    require_rank(b, 2, "concat_cols");
    if (a.extent(0) != b.extent(0)) {
        throw DimensionError("concat_cols: row counts differ, " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
    }
    const std::size_t r = a.extent(0), c1 = a.extent(1), c2 = b.extent(1);
    std::vector<double> out(r * (c1 + c2));
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < r; ++i) {
        std::copy(pa + i * c1, pa + (i + 1) * c1, out.data() + i * (c1 + c2));
        std::copy(pb + i * c2, pb + (i + 1) * c2, out.data() + i * (c1 + c2) + c1);
    }
    auto node = make_result({r, c1 + c2}, std::move(out));
    return finish(node, {a, b}, [a, b, r, c1, c2](Node& n) {
        const double* g = n.grad.data();
        const std::size_t w = c1 + c2;
        if (a.requires_grad()) {
            double* da = ensure_grad(*a.node()).data();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c1; ++j) da[i * c1 + j] += g[i * w + j];
        }
        if (b.requires_grad()) {
            double* db = ensure_grad(*b.node()).data();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c2; ++j) db[i * c2 + j] += g[i * w + c1 + j];
        }
    });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
    require_rank(x, 2, "slice_rows");
    const std::size_t r = x.extent(0), c = x.extent(1);
    if (begin + count > r) {
        throw IndexError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + std::to_string(r) +
                         " rows");
    }
    std::vector<double> out(x.data().begin() + begin * c,
                            x.data().begin() + (begin + count) * c);
    auto node = make_result({count, c}, std::move(out));
    return finish(node, {x}, [x, begin, count, c](Node& n) {
        double* dx = ensure_grad(*x.node()).data();
        const double* g = n.grad.data();
        for (std::size_t i = 0; i < count * c; ++i) dx[begin * c + i] += g[i];
    });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
    require_rank(x, 2, "slice_cols");
    const std::size_t r = x.extent(0), c = x.extent(1);
    if (begin + count > c) {
        throw IndexError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + std::to_string(c) +
                         " cols");
    }
    std::vector<double> out(r * count);
    const double* px = x.data().data();
    for (std::size_t i = 0; i < r; ++i)
        std::copy(px + i * c + begin, px + i * c + begin + count, out.data() + i * count);
    auto node = make_result({r, count}, std::move(out));
    return finish(node, {x}, [x, begin, count, r, c](Node& n) {
        double* dx = ensure_grad(*x.node()).data();
        const double* g = n.grad.data();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < count; ++j) dx[i * c + begin + j] += g[i * count + j];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size()) {
        throw DimensionError("reshape: " + shape_to_string(x.shape()) + " to " +
                             shape_to_string(shape) + " changes element count");
    }
    auto node = make_result(std::move(shape), {x.data().begin(), x.data().end()});
    return finish(node, {x}, [x](Node& n) {
        double* dx = ensure_grad(*x.node()).data();
        const double* g = n.grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) dx[i] += g[i];
    });
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0) {
        throw ContractError("dropout: rate must satisfy 0 <= p < 1, got " + std::to_string(p));
    }
    if (!training || p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = rng.uniform01() >= p ? keep_scale : 0.0;
    }
    std::vector<double> out(x.size());
    const double* px = x.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] * mask[i];
    auto node = make_result(x.shape(), std::move(out));
    return finish(node, {x}, [x, mask = std::move(mask)](Node& n) {
        double* dx = ensure_grad(*x.node()).data();
        const double* g = n.grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) dx[i] += g[i] * mask[i];
    });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    auto node = make_result({1}, {acc});
    return finish(node, {x}, [x](Node& n) {
        double* dx = ensure_grad(*x.node()).data();
        const double g = n.grad[0];
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g;
    });
}

}  // namespace rpt::ops
