#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <stdexcept>
#include <string>

namespace odonto {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file content (STL, TetGen, CSV, JSON).
class ParseError : public Error {
public:
    using Error::Error;
};

/// A precondition on user-supplied data does not hold.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// det F <= 0 in a deformable element.
class ElementInversion : public Error {
public:
    ElementInversion(int element, double det)
        : Error("element " + std::to_string(element) + " inverted (det F = " + std::to_string(det) + ")"),
          element_(element) {}
    int element() const { return element_; }

private:
    int element_;
};

/// Newton iteration failed after all load-step bisections.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

inline Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return m;
}

}  // namespace odonto
