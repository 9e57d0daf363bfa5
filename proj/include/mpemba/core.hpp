#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace mpemba {

using cplx = std::complex<double>;
using RMatrix = Eigen::MatrixXd;
using CMatrix = Eigen::MatrixXcd;
using RVector = Eigen::VectorXd;
using CVector = Eigen::VectorXcd;
using SparseC = Eigen::SparseMatrix<cplx>;

// Base of every library error. The CLI maps the subclasses onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

// Bad inputs: unknown enum values, out-of-domain parameters, incompatible blocks.
class ValidationError : public Error {
public:
    ValidationError(const std::string& what, std::string path = {})
        : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }
    const char* kind() const noexcept override { return "validation"; }

private:
    std::string path_;
};

// A dense or spectral build would exceed the configured size budget.
class BudgetError : public ValidationError {
public:
    using ValidationError::ValidationError;
    const char* kind() const noexcept override { return "budget"; }
};

class NumericalError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "numerical"; }
};

class GaplessModeError : public NumericalError {
public:
    using NumericalError::NumericalError;
    const char* kind() const noexcept override { return "gapless_mode"; }
};

// Malformed or version-mismatched files on disk.
class SchemaError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "schema"; }
};

inline void require(bool ok, const std::string& what, const std::string& path = {})
{
    if (!ok) throw ValidationError(what, path);
}

}  // namespace mpemba
