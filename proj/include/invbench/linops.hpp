#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/SparseCore>

#include "invbench/common.hpp"
#include "invbench/image.hpp"

namespace invbench::linops {

struct Shape {
    int rows = 0;
    int cols = 0;
    Eigen::Index size() const { return Eigen::Index(rows) * cols; }
    bool operator==(const Shape&) const = default;
};

enum class OpKind { identity, radon, inpaint_mask, blur_conv, downsample, composition, matrix };

std::string to_string(OpKind kind);

// Parallel-beam geometry. Angles in degrees, any order.
struct RadonGeometry {
    int image_size = 0;
    std::vector<double> angles_deg;
    int n_detectors = 0;
    double detector_spacing = 1.0;

    // `n` angles uniformly covering [0,180); detectors default to image_size.
    static RadonGeometry uniform(int image_size, int n_angles, int n_detectors = 0);
    void validate() const;
};

// A linear map between flat real vectors with an exact adjoint.
// Immutable after construction; apply/adjoint are safe to call concurrently.
class LinearOperator {
public:
    LinearOperator(Shape in, Shape out) : in_(in), out_(out) {}
    virtual ~LinearOperator() = default;

    virtual OpKind kind() const = 0;

    Shape in_shape() const { return in_; }
    Shape out_shape() const { return out_; }
    Eigen::Index in_size() const { return in_.size(); }
    Eigen::Index out_size() const { return out_.size(); }

    Vector apply(const Vector& x) const;
    Vector adjoint(const Vector& y) const;

protected:
    virtual Vector do_apply(const Vector& x) const = 0;
    virtual Vector do_adjoint(const Vector& y) const = 0;

private:
    Shape in_;
    Shape out_;
};

using OperatorPtr = std::shared_ptr<const LinearOperator>;

OperatorPtr make_identity(Shape shape);

// Ray-driven sampling at unit step along each ray with bilinear interpolation;
// stored as a sparse matrix so the adjoint is its exact transpose.
OperatorPtr make_radon(const RadonGeometry& geom);

// Diagonal 0/1 mask; masked-out entries are zeroed (output has the input shape).
OperatorPtr make_mask(Shape shape, std::vector<std::uint8_t> observed);
// Exactly round(missing_fraction * n) unobserved pixels, positions drawn from `seed`.
OperatorPtr make_random_mask(Shape shape, double missing_fraction, std::uint64_t seed);

// Circular 2-D convolution with `kernel` (kernel centre at (h/2, w/2)).
OperatorPtr make_blur(Shape shape, const Image& kernel);
// Gaussian low-pass (sigma = factor/2, truncated at 4 sigma, circular) then stride-`factor` subsampling.
OperatorPtr make_downsample(Shape shape, int factor);
// Applies children left to right: compose({A, B}) x = B(A(x)).
OperatorPtr make_composition(std::vector<OperatorPtr> children);
// Explicit dense matrix; `in`/`out` default to column vectors.
OperatorPtr make_matrix(Matrix m);

// Normalised kernels used by the blur and super-resolution operators.
Image gaussian_kernel(double sigma, double truncate = 4.0);
// Straight-line motion blur of `length` pixels at `angle_deg`, anti-aliased, unit sum.
Image motion_blur_kernel(int length, double angle_deg);

// Accessors for concrete operator parameters.
const RadonGeometry* radon_geometry(const LinearOperator& op);
const Eigen::SparseMatrix<double, Eigen::RowMajor>* radon_matrix(const LinearOperator& op);

// Power-iteration estimate of the spectral norm ||A||_2.
double op_norm(const LinearOperator& op, int iters, std::uint64_t seed);

// Dense matrix of the operator, column by column (small operators only).
Matrix to_dense(const LinearOperator& op);

Sinogram radon_apply(const Image& img, const RadonGeometry& geom);

enum class FbpFilter { ramp, hann };
FbpFilter parse_fbp_filter(const std::string& name);

// Filtered backprojection with the band-limited ramp kernel (optionally Hann-apodised).
Image fbp(const Sinogram& sino, const RadonGeometry& geom, FbpFilter filter = FbpFilter::ramp);

}  // namespace invbench::linops
