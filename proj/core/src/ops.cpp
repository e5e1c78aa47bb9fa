#include "cfm/ops.hpp"

#include <cmath>
#include <numbers>

#include "cfm/errors.hpp"

namespace cfm::ops {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
    require(a.shape() == b.shape(), ErrorKind::dimension,
            std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

bool is_column_of(const Tensor& col, const Tensor& mat) {
    return col.rank() == 2 && col.dim(1) == 1 && mat.rank() == 2 && col.dim(0) == mat.dim(0) && mat.dim(1) != 1;
}

// out[i] = f(x[i]); backward multiplies by df(x[i]).
template <class Forward, class Derivative>
Var unary(const Var& x, Forward f, Derivative df) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = f(xv[i]);
    }
    return Tape::record(std::move(out), {x}, [x, df](std::span<const double> g, GradSlots slots) {
        const Tensor& xv = x.value();
        auto& gx = *slots[0];
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i] * df(xv[i]);
        }
    });
}

// C[n,m] += A[n,k] * B[k,m]
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = c + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* brow = b + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                crow[j] += aip * brow[j];
            }
        }
    }
}

// C[n,k] += G[n,m] * B[k,m]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t n, std::size_t m, std::size_t k) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* grow = g + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                acc += grow[j] * brow[j];
            }
            c[i * k + p] += acc;
        }
    }
}

// C[k,m] += A[n,k]^T * G[n,m]
void gemm_tn(const double* a, const double* g, double* c, std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* grow = g + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            double* crow = c + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                crow[j] += aip * grow[j];
            }
        }
    }
}

void require_matrix(const Var& x, const char* op) {
    require(x.value().rank() == 2, ErrorKind::dimension,
            std::string(op) + ": expected a matrix, got shape " + shape_string(x.shape()));
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.value()[i] + b.value()[i];
    }
    return Tape::record(std::move(out), {a, b}, [](std::span<const double> g, GradSlots slots) {
        for (auto* s : slots) {
            if (s != nullptr) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    (*s)[i] += g[i];
                }
            }
        }
    });
}

Var subtract(const Var& a, const Var& b) {
    require_same_shape(a, b, "subtract");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.value()[i] - b.value()[i];
    }
    return Tape::record(std::move(out), {a, b}, [](std::span<const double> g, GradSlots slots) {
        if (slots[0] != nullptr) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*slots[0])[i] += g[i];
            }
        }
        if (slots[1] != nullptr) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*slots[1])[i] -= g[i];
            }
        }
    });
}

Var multiply(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (is_column_of(bv, av)) {
        const std::size_t n = av.dim(0);
        const std::size_t d = av.dim(1);
        Tensor out(av.shape());
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                out[r * d + c] = av[r * d + c] * bv[r];
            }
        }
        return Tape::record(std::move(out), {a, b}, [a, b, n, d](std::span<const double> g, GradSlots slots) {
            const Tensor& av = a.value();
            const Tensor& bv = b.value();
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < d; ++c) {
                    const double gi = g[r * d + c];
                    if (slots[0] != nullptr) {
                        (*slots[0])[r * d + c] += gi * bv[r];
                    }
                    if (slots[1] != nullptr) {
                        (*slots[1])[r] += gi * av[r * d + c];
                    }
                }
            }
        });
    }
    require_same_shape(a, b, "multiply");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return Tape::record(std::move(out), {a, b}, [a, b](std::span<const double> g, GradSlots slots) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (slots[0] != nullptr) {
                (*slots[0])[i] += g[i] * bv[i];
            }
            if (slots[1] != nullptr) {
                (*slots[1])[i] += g[i] * av[i];
            }
        }
    });
}

Var matmul(const Var& a, const Var& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t n = a.value().dim(0);
    const std::size_t k = a.value().dim(1);
    const std::size_t m = b.value().dim(1);
    require(b.value().dim(0) == k, ErrorKind::dimension,
            "matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    Tensor out({n, m});
    gemm_nn(a.value().values().data(), b.value().values().data(), out.values().data(), n, k, m);
    return Tape::record(std::move(out), {a, b}, [a, b, n, k, m](std::span<const double> g, GradSlots slots) {
        if (slots[0] != nullptr) {
            gemm_nt(g.data(), b.value().values().data(), slots[0]->data(), n, m, k);
        }
        if (slots[1] != nullptr) {
            gemm_tn(a.value().values().data(), g.data(), slots[1]->data(), n, k, m);
        }
    });
}

Var affine(const Var& x, const Var& weight, const Var& bias) {
    require_matrix(x, "affine");
    require_matrix(weight, "affine");
    const std::size_t n = x.value().dim(0);
    const std::size_t k = x.value().dim(1);
    const std::size_t m = weight.value().dim(1);
    require(weight.value().dim(0) == k, ErrorKind::dimension,
            "affine: input width " + std::to_string(k) + " does not match weight " + shape_string(weight.shape()));
    require(bias.value().size() == m, ErrorKind::dimension, "affine: bias length does not match output width");
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            out[i * m + j] = bias.value()[j];
        }
    }
    gemm_nn(x.value().values().data(), weight.value().values().data(), out.values().data(), n, k, m);
    return Tape::record(std::move(out), {x, weight, bias},
                        [x, weight, n, k, m](std::span<const double> g, GradSlots slots) {
                            if (slots[0] != nullptr) {
                                gemm_nt(g.data(), weight.value().values().data(), slots[0]->data(), n, m, k);
                            }
                            if (slots[1] != nullptr) {
                                gemm_tn(x.value().values().data(), g.data(), slots[1]->data(), n, k, m);
                            }
                            if (slots[2] != nullptr) {
                                auto& gb = *slots[2];
                                for (std::size_t i = 0; i < n; ++i) {
                                    for (std::size_t j = 0; j < m; ++j) {
                                        gb[j] += g[i * m + j];
                                    }
                                }
                            }
                        });
}

Var gelu(const Var& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    return unary(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [inv_sqrt_2pi](double v) {
            return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
}

Var tanh(const Var& x) {
    return unary(
        x, [](double v) { return std::tanh(v); }, [](double v) {
            const double y = std::tanh(v);
            return 1.0 - y * y;
        });
}

Var leaky_relu(const Var& x, double slope) {
    return unary(
        x, [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

Var activate(const Var& x, Activation kind, double leaky_slope) {
    switch (kind) {
        case Activation::gelu: return gelu(x);
        case Activation::tanh: return tanh(x);
        case Activation::leaky_relu: return leaky_relu(x, leaky_slope);
    }
    fail(ErrorKind::contract, "unknown activation");
}

Var square(const Var& x) {
    return unary(
        x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var sqrt(const Var& x) {
    for (double v : x.value().values()) {
        require(v >= 0.0, ErrorKind::numeric, "sqrt of a negative value");
    }
    return unary(
        x, [](double v) { return std::sqrt(v); }, [](double v) { return 0.5 / std::sqrt(v); });
}

Var abs(const Var& x) {
    return unary(
        x, [](double v) { return std::fabs(v); },
        [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var scale(const Var& x, double factor) {
    return unary(
        x, [factor](double v) { return factor * v; }, [factor](double) { return factor; });
}

Var add_scalar(const Var& x, double offset) {
    return unary(
        x, [offset](double v) { return v + offset; }, [](double) { return 1.0; });
}

Var sum(const Var& x) {
    double total = 0.0;
    for (double v : x.value().values()) {
        total += v;
    }
    return Tape::record(Tensor::scalar(total), {x}, [](std::span<const double> g, GradSlots slots) {
        for (double& gi : *slots[0]) {
            gi += g[0];
        }
    });
}

Var mean(const Var& x) {
    const double n = static_cast<double>(x.value().size());
    double total = 0.0;
    for (double v : x.value().values()) {
        total += v;
    }
    return Tape::record(Tensor::scalar(total / n), {x}, [n](std::span<const double> g, GradSlots slots) {
        for (double& gi : *slots[0]) {
            gi += g[0] / n;
        }
    });
}

Var l2_norm_squared(const Var& x) {
    double total = 0.0;
    for (double v : x.value().values()) {
        total += v * v;
    }
    return Tape::record(Tensor::scalar(total), {x}, [x](std::span<const double> g, GradSlots slots) {
        const Tensor& xv = x.value();
        for (std::size_t i = 0; i < xv.size(); ++i) {
            (*slots[0])[i] += 2.0 * xv[i] * g[0];
        }
    });
}

Var row_sum(const Var& x) {
    require_matrix(x, "row_sum");
    const std::size_t n = x.value().dim(0);
    const std::size_t d = x.value().dim(1);
    Tensor out({n, 1});
    for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            acc += x.value()[r * d + c];
        }
        out[r] = acc;
    }
    return Tape::record(std::move(out), {x}, [n, d](std::span<const double> g, GradSlots slots) {
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                (*slots[0])[r * d + c] += g[r];
            }
        }
    });
}

Var concatenate(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorKind::contract, "concatenate: no inputs");
    const std::size_t n = parts.front().value().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        require_matrix(p, "concatenate");
        require(p.value().dim(0) == n, ErrorKind::dimension, "concatenate: row counts differ");
        widths.push_back(p.value().dim(1));
        total += widths.back();
    }
    Tensor out({n, total});
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < widths[k]; ++c) {
                out[r * total + offset + c] = pv[r * widths[k] + c];
            }
        }
        offset += widths[k];
    }
    return Tape::record(std::move(out), parts, [n, widths, total](std::span<const double> g, GradSlots slots) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (slots[k] != nullptr) {
                for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t c = 0; c < widths[k]; ++c) {
                        (*slots[k])[r * widths[k] + c] += g[r * total + offset + c];
                    }
                }
            }
            offset += widths[k];
        }
    });
}

Var gather_rows(const Var& table, std::span<const int> indices) {
    require_matrix(table, "gather_rows");
    const std::size_t rows = table.value().dim(0);
    const std::size_t d = table.value().dim(1);
    require(!indices.empty(), ErrorKind::dimension, "gather_rows: no indices");
    std::vector<int> idx(indices.begin(), indices.end());
    Tensor out({idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        require(idx[r] >= 0 && static_cast<std::size_t>(idx[r]) < rows, ErrorKind::index,
                "gather_rows: index " + std::to_string(idx[r]) + " outside table of " + std::to_string(rows) + " rows");
        for (std::size_t c = 0; c < d; ++c) {
            out[r * d + c] = table.value()[static_cast<std::size_t>(idx[r]) * d + c];
        }
    }
    return Tape::record(std::move(out), {table}, [idx, d](std::span<const double> g, GradSlots slots) {
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                (*slots[0])[static_cast<std::size_t>(idx[r]) * d + c] += g[r * d + c];
            }
        }
    });
}

Var dropout(const Var& x, const DropoutMask& mask) {
    Tensor out = mask.apply(x.value());
    auto bits = std::make_shared<const std::vector<std::uint8_t>>(mask.bits);
    const double s = mask.scale;
    return Tape::record(std::move(out), {x}, [bits, s](std::span<const double> g, GradSlots slots) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            if ((*bits)[i]) {
                (*slots[0])[i] += g[i] * s;
            }
        }
    });
}

}  // namespace cfm::ops
