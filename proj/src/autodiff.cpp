#include "scl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "scl/errors.hpp"

namespace scl {

namespace {

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
    throw ShapeError(std::string(op) + ": " + detail);
}

std::string shapes(const Tensor& a) { return shape_str(a.shape()); }
std::string shapes(const Tensor& a, const Tensor& b) { return shape_str(a.shape()) + " and " + shape_str(b.shape()); }

bool is_matrix_like(const Tensor& t) { return t.rank() == 1 || t.rank() == 2; }

class MatMul final : public Op {
public:
    const char* name() const override { return "matmul"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        if (!is_matrix_like(a) || b.rank() != 2 || a.cols() != b.rows()) {
            shape_fail(name(), "incompatible operands " + shapes(a, b));
        }
        const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
        Tensor out({m, n});
        for (std::size_t i = 0; i < m; ++i) {
            double* o = out.data().data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = a[i * k + p];
                if (av == 0.0) continue;
                const double* br = b.data().data() + p * n;
                for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
            }
        }
        return out;
    }
    void backward(const Tensor&, std::span<const double> g, std::span<const Tensor* const> in,
                  std::span<const std::span<double>> gin) override {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
        if (!gin[0].empty()) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double* br = b.data().data() + p * n;
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * br[j];
                    gin[0][i * k + p] += s;
                }
            }
        }
        if (!gin[1].empty()) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = a[i * k + p];
                    if (av == 0.0) continue;
                    double* gb = gin[1].data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) gb[j] += av * g[i * n + j];
                }
            }
        }
    }
};

class AddBias final : public Op {
public:
    const char* name() const override { return "add_bias"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        const Tensor& x = *in[0];
        const Tensor& b = *in[1];
        if (!is_matrix_like(x) || b.size() != x.cols()) shape_fail(name(), "incompatible operands " + shapes(x, b));
        Tensor out = x;
        out.requires_grad = false;
        const std::size_t n = x.cols();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
        return out;
    }
    void backward(const Tensor&, std::span<const double> g, std::span<const Tensor* const> in,
                  std::span<const std::span<double>> gin) override {
        const std::size_t n = in[0]->cols();
        if (!gin[0].empty()) {
            for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
        }
        if (!gin[1].empty()) {
            for (std::size_t i = 0; i < g.size(); ++i) gin[1][i % n] += g[i];
        }
    }
};

class Relu final : public Op {
public:
    const char* name() const override { return "relu"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        Tensor out(in[0]->shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, (*in[0])[i]);
        return out;
    }
    void backward(const Tensor&, std::span<const double> g, std::span<const Tensor* const> in,
                  std::span<const std::span<double>> gin) override {
        if (gin[0].empty()) return;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if ((*in[0])[i] > 0.0) gin[0][i] += g[i];
        }
    }
};

class BatchNorm final : public Op {
public:
    explicit BatchNorm(double eps) : eps_(eps) {}
    const char* name() const override { return "batch_norm"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        const Tensor& x = *in[0];
        const Tensor& gamma = *in[1];
        const Tensor& beta = *in[2];
        if (!is_matrix_like(x) || gamma.size() != x.cols() || beta.size() != x.cols()) {
            shape_fail(name(), "input " + shapes(x) + " with gamma " + shapes(gamma) + " and beta " + shapes(beta));
        }
        const std::size_t m = x.rows(), n = x.cols();
        mean_.assign(n, 0.0);
        var_.assign(n, 0.0);
        inv_std_.assign(n, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) mean_[j] += x[i * n + j];
        for (auto& v : mean_) v /= static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double d = x[i * n + j] - mean_[j];
                var_[j] += d * d;
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            var_[j] /= static_cast<double>(m);
            inv_std_[j] = 1.0 / std::sqrt(var_[j] + eps_);
        }
        xhat_ = Tensor(x.shape());
        Tensor out(x.shape());
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double h = (x[i * n + j] - mean_[j]) * inv_std_[j];
                xhat_[i * n + j] = h;
                out[i * n + j] = gamma[j] * h + beta[j];
            }
        }
        rows_ = m;
        return out;
    }
    void backward(const Tensor&, std::span<const double> g, std::span<const Tensor* const> in,
                  std::span<const std::span<double>> gin) override {
        const Tensor& gamma = *in[1];
        const std::size_t m = rows_, n = gamma.size();
        std::vector<double> sum_g(n, 0.0), sum_gh(n, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                sum_g[j] += g[i * n + j];
                sum_gh[j] += g[i * n + j] * xhat_[i * n + j];
            }
        }
        if (!gin[1].empty())
            for (std::size_t j = 0; j < n; ++j) gin[1][j] += sum_gh[j];
        if (!gin[2].empty())
            for (std::size_t j = 0; j < n; ++j) gin[2][j] += sum_g[j];
        if (gin[0].empty()) return;
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double dh = g[i * n + j] * gamma[j];
                const double term = dh - inv_m * gamma[j] * (sum_g[j] + xhat_[i * n + j] * sum_gh[j]);
                gin[0][i * n + j] += inv_std_[j] * term;
            }
        }
    }
    const std::vector<double>& batch_mean() const { return mean_; }
    const std::vector<double>& batch_var() const { return var_; }

private:
    double eps_;
    std::size_t rows_ = 0;
    std::vector<double> mean_, var_, inv_std_;
    Tensor xhat_;
};

class BatchNormInference final : public Op {
public:
    BatchNormInference(const Tensor& mean, const Tensor& var, double eps)
        : mean_(mean.data().begin(), mean.data().end()) {
        inv_std_.reserve(var.size());
        for (double v : var.data()) inv_std_.push_back(1.0 / std::sqrt(v + eps));
    }
    const char* name() const override { return "batch_norm_inference"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        const Tensor& x = *in[0];
        const Tensor& gamma = *in[1];
        const Tensor& beta = *in[2];
        const std::size_t n = x.cols();
        if (!is_matrix_like(x) || gamma.size() != n || beta.size() != n || mean_.size() != n) {
            shape_fail(name(), "input " + shapes(x) + " with " + std::to_string(mean_.size()) + " running channels");
        }
        Tensor out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const std::size_t j = i % n;
            out[i] = gamma[j] * (x[i] - mean_[j]) * inv_std_[j] + beta[j];
        }
        return out;
    }
    void backward(const Tensor&, std::span<const double> g, std::span<const Tensor* const> in,
                  std::span<const std::span<double>> gin) override {
        const Tensor& x = *in[0];
        const Tensor& gamma = *in[1];
        const std::size_t n = x.cols();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const std::size_t j = i % n;
            const double h = (x[i] - mean_[j]) * inv_std_[j];
            if (!gin[0].empty()) gin[0][i] += g[i] * gamma[j] * inv_std_[j];
            if (!gin[1].empty()) gin[1][j] += g[i] * h;
            if (!gin[2].empty()) gin[2][j] += g[i];
        }
    }

private:
    std::vector<double> mean_, inv_std_;
};

class RowGroupMean final : public Op {
public:
    explicit RowGroupMean(std::vector<std::vector<std::size_t>> groups) : groups_(std::move(groups)) {}
    const char* name() const override { return "row_group_mean"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        const Tensor& x = *in[0];
        if (!is_matrix_like(x) || groups_.empty()) shape_fail(name(), "input " + shapes(x));
        const std::size_t n = x.cols();
        Tensor out({groups_.size(), n});
        for (std::size_t r = 0; r < groups_.size(); ++r) {
            const auto& grp = groups_[r];
            if (grp.empty()) shape_fail(name(), "empty group " + std::to_string(r));
            for (auto src : grp) {
                if (src >= x.rows()) {
                    shape_fail(name(), "row " + std::to_string(src) + " out of range for input " + shapes(x));
                }
                for (std::size_t j = 0; j < n; ++j) out[r * n + j] += x[src * n + j];
            }
            const double inv = 1.0 / static_cast<double>(grp.size());
            for (std::size_t j = 0; j < n; ++j) out[r * n + j] *= inv;
        }
        return out;
    }
    void backward(const Tensor&, std::span<const double> g, std::span<const Tensor* const> in,
                  std::span<const std::span<double>> gin) override {
        if (gin[0].empty()) return;
        const std::size_t n = in[0]->cols();
        for (std::size_t r = 0; r < groups_.size(); ++r) {
            const double inv = 1.0 / static_cast<double>(groups_[r].size());
            for (auto src : groups_[r])
                for (std::size_t j = 0; j < n; ++j) gin[0][src * n + j] += g[r * n + j] * inv;
        }
    }

private:
    std::vector<std::vector<std::size_t>> groups_;
};

class Reshape final : public Op {
public:
    explicit Reshape(Shape shape) : shape_(std::move(shape)) {}
    const char* name() const override { return "reshape"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        if (shape_numel(shape_) != in[0]->size()) shape_fail(name(), shapes(*in[0]) + " -> " + shape_str(shape_));
        return Tensor(shape_, std::vector<double>(in[0]->data().begin(), in[0]->data().end()));
    }
    void backward(const Tensor&, std::span<const double> g, std::span<const Tensor* const>,
                  std::span<const std::span<double>> gin) override {
        if (gin[0].empty()) return;
        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
    }

private:
    Shape shape_;
};

class ConcatCols final : public Op {
public:
    const char* name() const override { return "concat_cols"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        const Tensor& a = *in[0];
        const Tensor& b = *in[1];
        if (!is_matrix_like(a) || !is_matrix_like(b) || a.rows() != b.rows()) {
            shape_fail(name(), "row mismatch " + shapes(a, b));
        }
        const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
        Tensor out({m, na + nb});
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(a.data().begin() + i * na, na, out.data().begin() + i * (na + nb));
            std::copy_n(b.data().begin() + i * nb, nb, out.data().begin() + i * (na + nb) + na);
        }
        return out;
    }
    void backward(const Tensor&, std::span<const double> g, std::span<const Tensor* const> in,
                  std::span<const std::span<double>> gin) override {
        const std::size_t m = in[0]->rows(), na = in[0]->cols(), nb = in[1]->cols();
        for (std::size_t i = 0; i < m; ++i) {
            if (!gin[0].empty())
                for (std::size_t j = 0; j < na; ++j) gin[0][i * na + j] += g[i * (na + nb) + j];
            if (!gin[1].empty())
                for (std::size_t j = 0; j < nb; ++j) gin[1][i * nb + j] += g[i * (na + nb) + na + j];
        }
    }
};

class SliceRows final : public Op {
public:
    SliceRows(std::size_t begin, std::size_t count) : begin_(begin), count_(count) {}
    const char* name() const override { return "slice_rows"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        const Tensor& x = *in[0];
        if (!is_matrix_like(x) || count_ == 0 || begin_ + count_ > x.rows()) {
            shape_fail(name(), "rows [" + std::to_string(begin_) + ", " + std::to_string(begin_ + count_) +
                                   ") of " + shapes(x));
        }
        const std::size_t n = x.cols();
        return Tensor({count_, n}, std::vector<double>(x.data().begin() + begin_ * n,
                                                       x.data().begin() + (begin_ + count_) * n));
    }
    void backward(const Tensor&, std::span<const double> g, std::span<const Tensor* const> in,
                  std::span<const std::span<double>> gin) override {
        if (gin[0].empty()) return;
        const std::size_t off = begin_ * in[0]->cols();
        for (std::size_t i = 0; i < g.size(); ++i) gin[0][off + i] += g[i];
    }

private:
    std::size_t begin_, count_;
};

class L2NormalizeRows final : public Op {
public:
    const char* name() const override { return "l2_normalize"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        const Tensor& x = *in[0];
        if (!is_matrix_like(x)) shape_fail(name(), "input " + shapes(x));
        Tensor out = x;
        out.requires_grad = false;
        norms_.assign(x.rows(), 0.0);
        degenerate_ = 0;
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const double nrm = l2_norm(x.row(r));
            norms_[r] = nrm;
            if (nrm < kNormFloor) {
                ++degenerate_;
                continue;
            }
            for (auto& v : out.row(r)) v /= nrm;
        }
        return out;
    }
    void backward(const Tensor& out, std::span<const double> g, std::span<const Tensor* const>,
                  std::span<const std::span<double>> gin) override {
        if (gin[0].empty()) return;
        const std::size_t n = out.cols();
        for (std::size_t r = 0; r < out.rows(); ++r) {
            const double* gr = g.data() + r * n;
            double* dst = gin[0].data() + r * n;
            if (norms_[r] < kNormFloor) {
                for (std::size_t j = 0; j < n; ++j) dst[j] += gr[j];
                continue;
            }
            const auto y = out.row(r);
            double yg = 0.0;
            for (std::size_t j = 0; j < n; ++j) yg += y[j] * gr[j];
            for (std::size_t j = 0; j < n; ++j) dst[j] += (gr[j] - y[j] * yg) / norms_[r];
        }
    }
    std::size_t degenerate_count() const override { return degenerate_; }

private:
    std::vector<double> norms_;
    std::size_t degenerate_ = 0;
};

class Dot final : public Op {
public:
    const char* name() const override { return "dot"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        if (in[0]->size() != in[1]->size()) shape_fail(name(), "size mismatch " + shapes(*in[0], *in[1]));
        return Tensor::scalar(scl::dot(in[0]->data(), in[1]->data()));
    }
    void backward(const Tensor&, std::span<const double> g, std::span<const Tensor* const> in,
                  std::span<const std::span<double>> gin) override {
        for (std::size_t i = 0; i < in[0]->size(); ++i) {
            if (!gin[0].empty()) gin[0][i] += g[0] * (*in[1])[i];
            if (!gin[1].empty()) gin[1][i] += g[0] * (*in[0])[i];
        }
    }
};

class Sum final : public Op {
public:
    const char* name() const override { return "sum"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Tensor::scalar(s);
    }
    void backward(const Tensor&, std::span<const double> g, std::span<const Tensor* const>,
                  std::span<const std::span<double>> gin) override {
        for (auto& v : gin[0]) v += g[0];
    }
};

class Scale final : public Op {
public:
    explicit Scale(double factor) : factor_(factor) {}
    const char* name() const override { return "scale"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        Tensor out(in[0]->shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] * factor_;
        return out;
    }
    void backward(const Tensor&, std::span<const double> g, std::span<const Tensor* const>,
                  std::span<const std::span<double>> gin) override {
        for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i] * factor_;
    }

private:
    double factor_;
};

class AddSub final : public Op {
public:
    explicit AddSub(double sign) : sign_(sign) {}
    const char* name() const override { return sign_ > 0 ? "add" : "sub"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        if (in[0]->shape() != in[1]->shape()) shape_fail(name(), "shape mismatch " + shapes(*in[0], *in[1]));
        Tensor out(in[0]->shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] + sign_ * (*in[1])[i];
        return out;
    }
    void backward(const Tensor&, std::span<const double> g, std::span<const Tensor* const>,
                  std::span<const std::span<double>> gin) override {
        for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i];
        for (std::size_t i = 0; i < gin[1].size(); ++i) gin[1][i] += sign_ * g[i];
    }

private:
    double sign_;
};

class Log final : public Op {
public:
    const char* name() const override { return "log"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        Tensor out(in[0]->shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log((*in[0])[i]);
        return out;
    }
    void backward(const Tensor&, std::span<const double> g, std::span<const Tensor* const> in,
                  std::span<const std::span<double>> gin) override {
        for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i] / (*in[0])[i];
    }
};

class Exp final : public Op {
public:
    const char* name() const override { return "exp"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        Tensor out(in[0]->shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp((*in[0])[i]);
        return out;
    }
    void backward(const Tensor& out, std::span<const double> g, std::span<const Tensor* const>,
                  std::span<const std::span<double>> gin) override {
        for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i] * out[i];
    }
};

class WeightedLogSumExp final : public Op {
public:
    explicit WeightedLogSumExp(std::vector<double> weights) : weights_(std::move(weights)) {}
    const char* name() const override { return "weighted_log_sum_exp"; }
    Tensor forward(std::span<const Tensor* const> in) override {
        const Tensor& x = *in[0];
        if (!is_matrix_like(x) || weights_.size() != x.cols()) {
            shape_fail(name(), "input " + shapes(x) + " with " + std::to_string(weights_.size()) + " weights");
        }
        const std::size_t m = x.rows(), n = x.cols();
        Tensor out({m, 1});
        for (std::size_t r = 0; r < m; ++r) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                if (weights_[j] > 0.0) mx = std::max(mx, x[r * n + j]);
            }
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (weights_[j] > 0.0) s += weights_[j] * std::exp(x[r * n + j] - mx);
            }
            out[r] = mx + std::log(s);
        }
        return out;
    }
    void backward(const Tensor& out, std::span<const double> g, std::span<const Tensor* const> in,
                  std::span<const std::span<double>> gin) override {
        if (gin[0].empty()) return;
        const Tensor& x = *in[0];
        const std::size_t m = x.rows(), n = x.cols();
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < n; ++j) {
                if (weights_[j] > 0.0) gin[0][r * n + j] += g[r] * weights_[j] * std::exp(x[r * n + j] - out[r]);
            }
        }
    }

private:
    std::vector<double> weights_;
};

}  // namespace

Var Graph::input(const std::string& name, Tensor value, bool requires_grad) {
    Node n;
    n.kind = Kind::Input;
    n.name = name;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.evaluated = true;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

Var Graph::placeholder(const std::string& name, bool requires_grad) {
    Node n;
    n.kind = Kind::Input;
    n.name = name;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
    Node n;
    n.kind = Kind::Constant;
    n.value = std::move(value);
    n.value.requires_grad = false;
    n.evaluated = true;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

Var Graph::parameter(Tensor& param) {
    Node n;
    n.kind = Kind::Parameter;
    n.param = &param;
    n.value = Tensor(param.shape(), std::vector<double>(param.data().begin(), param.data().end()));
    n.requires_grad = param.requires_grad;
    n.evaluated = true;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
}

const Graph::Node& Graph::node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("graph: invalid node handle");
    return nodes_[v.id];
}

void Graph::run(Node& n) {
    std::vector<const Tensor*> in;
    in.reserve(n.inputs.size());
    for (auto id : n.inputs) in.push_back(&nodes_[id].value);
    n.value = n.op->forward(in);
    n.evaluated = true;
}

Var Graph::add_op(std::unique_ptr<Op> op, std::vector<Var> inputs) {
    Node n;
    n.op = std::move(op);
    bool ready = true;
    for (auto v : inputs) {
        const Node& src = node(v);
        n.inputs.push_back(v.id);
        n.requires_grad = n.requires_grad || src.requires_grad;
        ready = ready && src.evaluated;
    }
    nodes_.push_back(std::move(n));
    if (ready) run(nodes_.back());
    return {nodes_.size() - 1};
}

Var Graph::matmul(Var a, Var b) { return add_op(std::make_unique<MatMul>(), {a, b}); }
Var Graph::add_bias(Var x, Var bias) { return add_op(std::make_unique<AddBias>(), {x, bias}); }
Var Graph::relu(Var x) { return add_op(std::make_unique<Relu>(), {x}); }
Var Graph::batch_norm(Var x, Var gamma, Var beta, double eps) {
    return add_op(std::make_unique<BatchNorm>(eps), {x, gamma, beta});
}
Var Graph::batch_norm_inference(Var x, Var gamma, Var beta, const Tensor& running_mean,
                                const Tensor& running_var, double eps) {
    return add_op(std::make_unique<BatchNormInference>(running_mean, running_var, eps), {x, gamma, beta});
}
Var Graph::row_group_mean(Var x, std::vector<std::vector<std::size_t>> groups) {
    return add_op(std::make_unique<RowGroupMean>(std::move(groups)), {x});
}
Var Graph::reshape(Var x, Shape shape) { return add_op(std::make_unique<Reshape>(std::move(shape)), {x}); }
Var Graph::concat_cols(Var a, Var b) { return add_op(std::make_unique<ConcatCols>(), {a, b}); }
Var Graph::slice_rows(Var x, std::size_t begin, std::size_t count) {
    return add_op(std::make_unique<SliceRows>(begin, count), {x});
}
Var Graph::l2_normalize_rows(Var x) { return add_op(std::make_unique<L2NormalizeRows>(), {x}); }
Var Graph::dot(Var a, Var b) { return add_op(std::make_unique<Dot>(), {a, b}); }
Var Graph::sum(Var x) { return add_op(std::make_unique<Sum>(), {x}); }
Var Graph::scale(Var x, double factor) { return add_op(std::make_unique<Scale>(factor), {x}); }
Var Graph::add(Var a, Var b) { return add_op(std::make_unique<AddSub>(1.0), {a, b}); }
Var Graph::sub(Var a, Var b) { return add_op(std::make_unique<AddSub>(-1.0), {a, b}); }
Var Graph::log(Var x) { return add_op(std::make_unique<Log>(), {x}); }
Var Graph::exp(Var x) { return add_op(std::make_unique<Exp>(), {x}); }
Var Graph::weighted_log_sum_exp(Var x, std::vector<double> weights) {
    return add_op(std::make_unique<WeightedLogSumExp>(std::move(weights)), {x});
}

std::map<std::string, Tensor> Graph::evaluate(const std::map<std::string, Tensor>& inputs) {
    for (auto& n : nodes_) {
        if (n.kind == Kind::Input) {
            auto it = inputs.find(n.name);
            if (it != inputs.end()) {
                n.value = it->second;
                n.evaluated = true;
            } else if (!n.evaluated) {
                throw std::invalid_argument("evaluate: input '" + n.name + "' is not bound");
            }
        } else if (n.kind == Kind::Parameter) {
            n.value = Tensor(n.param->shape(), std::vector<double>(n.param->data().begin(), n.param->data().end()));
        }
    }
    for (auto& n : nodes_) {
        if (n.kind == Kind::Operation) run(n);
    }
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : outputs_) out.emplace(name, nodes_[v.id].value);
    return out;
}

void Graph::backward(Var loss) {
    const Node& root = node(loss);
    if (!root.evaluated) throw std::logic_error("backward: forward pass has not been evaluated");
    for (std::size_t i = 0; i <= loss.id; ++i) {
        if (!nodes_[i].evaluated) {
            throw std::logic_error("backward: node " + std::to_string(i) + " has not been evaluated");
        }
    }
    if (root.value.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(root.value.shape()));
    for (auto& n : nodes_) n.grad = Tensor();
    if (!root.requires_grad) return;

    nodes_[loss.id].grad = Tensor(root.value.shape(), 1.0);
    std::vector<const Tensor*> in;
    std::vector<std::span<double>> gin;
    for (std::size_t idx = loss.id + 1; idx-- > 0;) {
        Node& n = nodes_[idx];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.kind == Kind::Parameter) {
            auto dst = n.param->ensure_grad();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
            continue;
        }
        if (n.kind != Kind::Operation) continue;
        in.clear();
        gin.clear();
        for (auto id : n.inputs) {
            Node& src = nodes_[id];
            in.push_back(&src.value);
            if (src.requires_grad) {
                if (src.grad.empty()) src.grad = Tensor(src.value.shape());
                gin.push_back(src.grad.data());
            } else {
                gin.emplace_back();
            }
        }
        n.op->backward(n.value, n.grad.data(), in, gin);
    }
}

const Tensor& Graph::value(Var v) const {
    const Node& n = node(v);
    if (!n.evaluated) throw std::logic_error("value: node " + std::to_string(v.id) + " has not been evaluated");
    return n.value;
}

const Tensor& Graph::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) {
        static thread_local Tensor zeros;
        zeros = Tensor(n.value.shape());
        return zeros;
    }
    return n.grad;
}

bool Graph::evaluated(Var v) const { return node(v).evaluated; }

const Op& Graph::op(Var v) const {
    const Node& n = node(v);
    if (!n.op) throw std::invalid_argument("op: node " + std::to_string(v.id) + " is a leaf");
    return *n.op;
}

Graph::BatchStats Graph::batch_norm_stats(Var v) const {
    const auto* bn = dynamic_cast<const BatchNorm*>(&op(v));
    if (bn == nullptr) throw std::invalid_argument("batch_norm_stats: node is not a batch_norm");
    if (!node(v).evaluated) throw std::logic_error("batch_norm_stats: node has not been evaluated");
    return {bn->batch_mean(), bn->batch_var()};
}

std::size_t Graph::norm_floor_hits() const {
    std::size_t total = 0;
    for (const auto& n : nodes_) {
        if (n.op && n.evaluated) total += n.op->degenerate_count();
    }
    return total;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_difference_gradient: step must be positive");
    Tensor probe = x;
    Tensor out(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double orig = probe[k];
        probe[k] = orig + step;
        const double fp = f(probe);
        probe[k] = orig - step;
        const double fm = f(probe);
        probe[k] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericalError("finite_difference_gradient: non-finite value at coordinate " + std::to_string(k));
        }
        out[k] = (fp - fm) / (2.0 * step);
    }
    return out;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double scale = std::sqrt(std::max(na, nb));
    if (scale < floor) return std::sqrt(diff);
    return std::sqrt(diff) / scale;
}

}  // namespace scl
