#include "invbench/linops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace invbench::linops {

std::string to_string(OpKind kind) {
    switch (kind) {
        case OpKind::identity: return "identity";
        case OpKind::radon: return "radon";
        case OpKind::inpaint_mask: return "inpaint_mask";
        case OpKind::blur_conv: return "blur_conv";
        case OpKind::downsample: return "downsample";
        case OpKind::composition: return "composition";
        case OpKind::matrix: return "matrix";
    }
    return "unknown";
}

RadonGeometry RadonGeometry::uniform(int image_size, int n_angles, int n_detectors) {
    require(n_angles >= 1, "RadonGeometry: need at least one angle");
    RadonGeometry g;
    g.image_size = image_size;
    g.n_detectors = n_detectors > 0 ? n_detectors : image_size;
    g.angles_deg.resize(n_angles);
    for (int i = 0; i < n_angles; ++i) g.angles_deg[i] = 180.0 * i / n_angles;
    g.validate();
    return g;
}

void RadonGeometry::validate() const {
    require(image_size >= 1, "RadonGeometry: image_size must be positive");
    require(n_detectors >= 1, "RadonGeometry: n_detectors must be positive");
    require(detector_spacing > 0.0, "RadonGeometry: detector_spacing must be positive");
    require(!angles_deg.empty(), "RadonGeometry: no angles");
    for (double a : angles_deg) require(std::isfinite(a), "RadonGeometry: angles must be finite");
}

Vector LinearOperator::apply(const Vector& x) const {
    require(x.size() == in_size(), "apply: input length " + std::to_string(x.size()) + " does not match operator input " +
                                       std::to_string(in_size()));
    return do_apply(x);
}

Vector LinearOperator::adjoint(const Vector& y) const {
    require(y.size() == out_size(), "adjoint: input length " + std::to_string(y.size()) +
                                        " does not match operator output " + std::to_string(out_size()));
    return do_adjoint(y);
}

namespace {

class IdentityOp final : public LinearOperator {
public:
    explicit IdentityOp(Shape s) : LinearOperator(s, s) {}
    OpKind kind() const override { return OpKind::identity; }

protected:
    Vector do_apply(const Vector& x) const override { return x; }
    Vector do_adjoint(const Vector& y) const override { return y; }
};

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

SparseRows build_radon_matrix(const RadonGeometry& g) {
    const int n = g.image_size;
    const double centre = 0.5 * (n - 1);
    const double det_centre = 0.5 * (g.n_detectors - 1);
    const int half_len = int(std::ceil(n * std::numbers::sqrt2 / 2.0)) + 1;

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(std::size_t(g.angles_deg.size()) * g.n_detectors * (2 * half_len + 1) * 4);
    for (std::size_t a = 0; a < g.angles_deg.size(); ++a) {
        const double th = g.angles_deg[a] * std::numbers::pi / 180.0;
        const double c = std::cos(th), s = std::sin(th);
        for (int d = 0; d < g.n_detectors; ++d) {
            const int row = int(a) * g.n_detectors + d;
            const double offset = (d - det_centre) * g.detector_spacing;
            for (int k = -half_len; k <= half_len; ++k) {
                // Sample point in centred coordinates (x along columns, y along rows).
                const double x = offset * c - k * s;
                const double y = offset * s + k * c;
                const double px = x + centre, py = y + centre;
                const double fx0 = std::floor(px), fy0 = std::floor(py);
                const int i0 = int(fx0), j0 = int(fy0);
                const double fx = px - fx0, fy = py - fy0;
                const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
                const int ci[4] = {i0, i0 + 1, i0, i0 + 1};
                const int rj[4] = {j0, j0, j0 + 1, j0 + 1};
                for (int q = 0; q < 4; ++q) {
                    if (w[q] == 0.0) continue;
                    if (ci[q] < 0 || ci[q] >= n || rj[q] < 0 || rj[q] >= n) continue;
                    trips.emplace_back(row, rj[q] * n + ci[q], w[q]);
                }
            }
        }
    }
    SparseRows m(Eigen::Index(g.angles_deg.size()) * g.n_detectors, Eigen::Index(n) * n);
    m.setFromTriplets(trips.begin(), trips.end());
    m.makeCompressed();
    return m;
}

class RadonOp final : public LinearOperator {
public:
    explicit RadonOp(RadonGeometry g)
        : LinearOperator({g.image_size, g.image_size}, {int(g.angles_deg.size()), g.n_detectors}),
          geom_(std::move(g)), mat_(build_radon_matrix(geom_)), mat_t_(mat_.transpose()) {}
    OpKind kind() const override { return OpKind::radon; }
    const RadonGeometry& geometry() const { return geom_; }
    const SparseRows& matrix() const { return mat_; }

protected:
    Vector do_apply(const Vector& x) const override { return mat_ * x; }
    Vector do_adjoint(const Vector& y) const override { return mat_t_ * y; }

private:
    RadonGeometry geom_;
    SparseRows mat_;
    SparseRows mat_t_;
};

class MaskOp final : public LinearOperator {
public:
    MaskOp(Shape s, std::vector<std::uint8_t> observed) : LinearOperator(s, s), mask_(s.size()) {
        require(Eigen::Index(observed.size()) == s.size(), "mask: size does not match shape");
        for (Eigen::Index i = 0; i < s.size(); ++i) mask_[i] = observed[i] ? 1.0 : 0.0;
    }
    OpKind kind() const override { return OpKind::inpaint_mask; }

protected:
    Vector do_apply(const Vector& x) const override { return x.cwiseProduct(mask_); }
    Vector do_adjoint(const Vector& y) const override { return y.cwiseProduct(mask_); }

private:
    Vector mask_;
};

// y = k (*) x, circular; adjoint is circular correlation.
Vector circular_conv(const Vector& x, Shape s, const Image& k, bool transpose) {
    Vector out = Vector::Zero(x.size());
    const int kh = k.height, kw = k.width;
    const int oy = kh / 2, ox = kw / 2;
    for (int i = 0; i < kh; ++i) {
        for (int j = 0; j < kw; ++j) {
            const double w = k(i, j);
            if (w == 0.0) continue;
            int dy = i - oy, dx = j - ox;
            if (transpose) {
                dy = -dy;
                dx = -dx;
            }
            for (int r = 0; r < s.rows; ++r) {
                const int rs = ((r - dy) % s.rows + s.rows) % s.rows;
                for (int c = 0; c < s.cols; ++c) {
                    const int cs = ((c - dx) % s.cols + s.cols) % s.cols;
                    out[Eigen::Index(r) * s.cols + c] += w * x[Eigen::Index(rs) * s.cols + cs];
                }
            }
        }
    }
    return out;
}

class BlurOp final : public LinearOperator {
public:
    BlurOp(Shape s, Image kernel) : LinearOperator(s, s), kernel_(std::move(kernel)) {
        require(kernel_.width >= 1 && kernel_.height >= 1, "blur: empty kernel");
        require(kernel_.data.allFinite(), "blur: non-finite kernel");
    }
    OpKind kind() const override { return OpKind::blur_conv; }

protected:
    Vector do_apply(const Vector& x) const override { return circular_conv(x, in_shape(), kernel_, false); }
    Vector do_adjoint(const Vector& y) const override { return circular_conv(y, in_shape(), kernel_, true); }

private:
    Image kernel_;
};

class DownsampleOp final : public LinearOperator {
public:
    DownsampleOp(Shape s, int factor)
        : LinearOperator(s, {s.rows / std::max(factor, 1), s.cols / std::max(factor, 1)}),
          factor_(factor), kernel_(gaussian_kernel(0.5 * factor)) {
        require(factor >= 1, "downsample: factor must be >= 1");
        require(s.rows % factor == 0 && s.cols % factor == 0, "downsample: shape must be divisible by factor");
    }
    OpKind kind() const override { return OpKind::downsample; }

protected:
    Vector do_apply(const Vector& x) const override {
        const Vector b = circular_conv(x, in_shape(), kernel_, false);
        const Shape o = out_shape();
        Vector y(o.size());
        for (int r = 0; r < o.rows; ++r)
            for (int c = 0; c < o.cols; ++c)
                y[Eigen::Index(r) * o.cols + c] = b[Eigen::Index(r) * factor_ * in_shape().cols + c * factor_];
        return y;
    }
    Vector do_adjoint(const Vector& y) const override {
        const Shape o = out_shape();
        Vector up = Vector::Zero(in_size());
        for (int r = 0; r < o.rows; ++r)
            for (int c = 0; c < o.cols; ++c)
                up[Eigen::Index(r) * factor_ * in_shape().cols + c * factor_] = y[Eigen::Index(r) * o.cols + c];
        return circular_conv(up, in_shape(), kernel_, true);
    }

private:
    int factor_;
    Image kernel_;
};

class CompositionOp final : public LinearOperator {
public:
    explicit CompositionOp(std::vector<OperatorPtr> ch)
        : LinearOperator(ch.empty() ? Shape{} : ch.front()->in_shape(), ch.empty() ? Shape{} : ch.back()->out_shape()),
          children_(std::move(ch)) {
        require(!children_.empty(), "composition: no children");
        for (std::size_t i = 0; i < children_.size(); ++i) {
            require(children_[i] != nullptr, "composition: null child");
            if (i > 0)
                require(children_[i - 1]->out_size() == children_[i]->in_size(),
                        "composition: child shapes do not chain");
        }
    }
    OpKind kind() const override { return OpKind::composition; }

protected:
    Vector do_apply(const Vector& x) const override {
        Vector v = x;
        for (const auto& c : children_) v = c->apply(v);
        return v;
    }
    Vector do_adjoint(const Vector& y) const override {
        Vector v = y;
        for (auto it = children_.rbegin(); it != children_.rend(); ++it) v = (*it)->adjoint(v);
        return v;
    }

private:
    std::vector<OperatorPtr> children_;
};

class MatrixOp final : public LinearOperator {
public:
    explicit MatrixOp(Matrix m)
        : LinearOperator({int(m.cols()), 1}, {int(m.rows()), 1}), m_(std::move(m)) {}
    OpKind kind() const override { return OpKind::matrix; }

protected:
    Vector do_apply(const Vector& x) const override { return m_ * x; }
    Vector do_adjoint(const Vector& y) const override { return m_.transpose() * y; }

private:
    Matrix m_;
};

}  // namespace

OperatorPtr make_identity(Shape shape) { return std::make_shared<IdentityOp>(shape); }

OperatorPtr make_radon(const RadonGeometry& geom) {
    geom.validate();
    return std::make_shared<RadonOp>(geom);
}

OperatorPtr make_mask(Shape shape, std::vector<std::uint8_t> observed) {
    return std::make_shared<MaskOp>(shape, std::move(observed));
}

OperatorPtr make_random_mask(Shape shape, double missing_fraction, std::uint64_t seed) {
    require(missing_fraction >= 0.0 && missing_fraction <= 1.0, "mask: missing fraction outside [0,1]");
    const auto n = std::size_t(shape.size());
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    // Fisher-Yates with explicit draws so the mask does not depend on std::shuffle internals.
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(idx[i - 1], idx[pick(rng)]);
    }
    const auto missing = std::size_t(std::llround(missing_fraction * double(n)));
    std::vector<std::uint8_t> observed(n, 1);
    for (std::size_t i = 0; i < missing; ++i) observed[idx[i]] = 0;
    return make_mask(shape, std::move(observed));
}

OperatorPtr make_blur(Shape shape, const Image& kernel) { return std::make_shared<BlurOp>(shape, kernel); }

OperatorPtr make_downsample(Shape shape, int factor) { return std::make_shared<DownsampleOp>(shape, factor); }

OperatorPtr make_composition(std::vector<OperatorPtr> children) {
    return std::make_shared<CompositionOp>(std::move(children));
}

OperatorPtr make_matrix(Matrix m) { return std::make_shared<MatrixOp>(std::move(m)); }

Image gaussian_kernel(double sigma, double truncate) {
    require(sigma > 0.0, "gaussian_kernel: sigma must be positive");
    const int radius = std::max(1, int(std::ceil(truncate * sigma)));
    const int size = 2 * radius + 1;
    Image k(size, size);
    double total = 0.0;
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            const double dy = i - radius, dx = j - radius;
            const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            k(i, j) = v;
            total += v;
        }
    k.data /= total;
    return k;
}

Image motion_blur_kernel(int length, double angle_deg) {
    require(length >= 1, "motion_blur_kernel: length must be >= 1");
    const int size = length % 2 ? length : length + 1;
    Image k(size, size);
    const double th = angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const double centre = 0.5 * (size - 1);
    // Supersample the segment and splat bilinearly.
    const int samples = 16 * length;
    for (int q = 0; q < samples; ++q) {
        const double u = (q + 0.5) / samples * (length - 1) - 0.5 * (length - 1);
        const double px = centre + u * c, py = centre - u * s;
        const int i0 = int(std::floor(py)), j0 = int(std::floor(px));
        const double fy = py - i0, fx = px - j0;
        const double w[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
        const int ii[4] = {i0, i0, i0 + 1, i0 + 1};
        const int jj[4] = {j0, j0 + 1, j0, j0 + 1};
        for (int t = 0; t < 4; ++t)
            if (ii[t] >= 0 && ii[t] < size && jj[t] >= 0 && jj[t] < size) k(ii[t], jj[t]) += w[t];
    }
    k.data /= k.data.sum();
    return k;
}

const RadonGeometry* radon_geometry(const LinearOperator& op) {
    const auto* r = dynamic_cast<const RadonOp*>(&op);
    return r ? &r->geometry() : nullptr;
}

const Eigen::SparseMatrix<double, Eigen::RowMajor>* radon_matrix(const LinearOperator& op) {
    const auto* r = dynamic_cast<const RadonOp*>(&op);
    return r ? &r->matrix() : nullptr;
}

double op_norm(const LinearOperator& op, int iters, std::uint64_t seed) {
    require(iters >= 1, "op_norm: iters must be >= 1");
    Rng rng(seed);
    Vector v = randn(op.in_size(), rng);
    v /= v.norm();
    double est = 0.0;
    for (int k = 0; k < iters; ++k) {
        const Vector w = op.adjoint(op.apply(v));
        const double nw = w.norm();
        if (nw == 0.0) return 0.0;
        v = w / nw;
        est = op.apply(v).norm();
    }
    return est;
}

Matrix to_dense(const LinearOperator& op) {
    Matrix m(op.out_size(), op.in_size());
    Vector e = Vector::Zero(op.in_size());
    for (Eigen::Index j = 0; j < op.in_size(); ++j) {
        e[j] = 1.0;
        m.col(j) = op.apply(e);
        e[j] = 0.0;
    }
    return m;
}

Sinogram radon_apply(const Image& img, const RadonGeometry& geom) {
    geom.validate();
    require(img.width == img.height, "radon_apply: image must be square");
    require(img.width == geom.image_size, "radon_apply: image size does not match geometry");
    const auto op = make_radon(geom);
    return Sinogram(int(geom.angles_deg.size()), geom.n_detectors, op->apply(img.data));
}

FbpFilter parse_fbp_filter(const std::string& name) {
    if (name == "ramp") return FbpFilter::ramp;
    if (name == "hann") return FbpFilter::hann;
    throw InvalidInput("unknown FBP filter '" + name + "'");
}

namespace {

// Spatial band-limited ramp kernel h[k], k in [-(len-1), len-1], times spacing tau.
std::vector<double> ramp_kernel(int len, double tau, FbpFilter filter) {
    const int half = len - 1;
    std::vector<double> h(2 * half + 1, 0.0);
    const double pi2 = std::numbers::pi * std::numbers::pi;
    for (int k = -half; k <= half; ++k) {
        double v = 0.0;
        if (k == 0)
            v = 1.0 / (4.0 * tau * tau);
        else if (k % 2 != 0)
            v = -1.0 / (pi2 * double(k) * k * tau * tau);
        h[k + half] = v;
    }
    if (filter == FbpFilter::hann) {
        // Apodise in frequency: H(w) * 0.5 (1 + cos(pi w / w_max)) on a zero-padded periodic grid.
        int period = 1;
        while (period < 2 * len) period *= 2;
        std::vector<double> circ(period, 0.0);
        for (int k = -half; k <= half; ++k) circ[(k + period) % period] += h[k + half];
        std::vector<double> spec(period, 0.0);
        for (int f = 0; f < period; ++f) {
            double acc = 0.0;
            for (int k = 0; k < period; ++k) acc += circ[k] * std::cos(2.0 * std::numbers::pi * f * k / period);
            const int fs = f <= period / 2 ? f : period - f;
            const double win = 0.5 * (1.0 + std::cos(std::numbers::pi * fs / (period / 2)));
            spec[f] = acc * win;
        }
        for (int k = -half; k <= half; ++k) {
            const int kk = (k + period) % period;
            double acc = 0.0;
            for (int f = 0; f < period; ++f) acc += spec[f] * std::cos(2.0 * std::numbers::pi * f * kk / period);
            h[k + half] = acc / period;
        }
    }
    for (double& v : h) v *= tau;
    return h;
}

}  // namespace

Image fbp(const Sinogram& sino, const RadonGeometry& geom, FbpFilter filter) {
    geom.validate();
    require(sino.n_angles == int(geom.angles_deg.size()) && sino.n_detectors == geom.n_detectors,
            "fbp: sinogram shape does not match geometry");
    const int nd = geom.n_detectors;
    const double tau = geom.detector_spacing;
    const auto h = ramp_kernel(nd, tau, filter);
    const int half = nd - 1;

    const int n = geom.image_size;
    const double centre = 0.5 * (n - 1);
    const double det_centre = 0.5 * (nd - 1);
    Image out(n, n);
    std::vector<double> q(nd);
    for (int a = 0; a < sino.n_angles; ++a) {
        for (int i = 0; i < nd; ++i) {
            double acc = 0.0;
            for (int j = 0; j < nd; ++j) acc += sino(a, j) * h[i - j + half];
            q[i] = acc;
        }
        const double th = geom.angles_deg[a] * std::numbers::pi / 180.0;
        const double c = std::cos(th), s = std::sin(th);
        for (int r = 0; r < n; ++r) {
            const double y = r - centre;
            for (int col = 0; col < n; ++col) {
                const double x = col - centre;
                const double pos = (x * c + y * s) / tau + det_centre;
                const double f0 = std::floor(pos);
                const int i0 = int(f0);
                const double fr = pos - f0;
                double v = 0.0;
                if (i0 >= 0 && i0 < nd) v += (1.0 - fr) * q[i0];
                if (i0 + 1 >= 0 && i0 + 1 < nd) v += fr * q[i0 + 1];
                out(r, col) += v;
            }
        }
    }
    out.data *= std::numbers::pi / sino.n_angles;
    return out;
}

}  // namespace invbench::linops
