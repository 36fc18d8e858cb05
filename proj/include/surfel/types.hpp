#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace surfel {

template <typename Scalar> using Vector2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar> using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar> using Vector4 = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar> using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar> using Matrix4 = Eigen::Matrix<Scalar, 4, 4>;
template <typename Scalar> using Quaternion = Eigen::Quaternion<Scalar>;

/// Dense pixel-major image. Row `y * width + x` of `data` holds the channels of pixel (x, y).
template <typename T, int Channels>
struct Image {
    static constexpr int kChannels = Channels;
    using Storage = Eigen::Array<T, Eigen::Dynamic, Channels,
                                 Channels == 1 ? Eigen::ColMajor : Eigen::RowMajor>;

    int width = 0;
    int height = 0;
    Storage data;

    Image() = default;
    Image(int w, int h, T fill = T(0))
        : width(w), height(h), data(Storage::Constant(Eigen::Index(w) * h, Channels, fill)) {}

    [[nodiscard]] bool empty() const { return data.rows() == 0; }
    [[nodiscard]] Eigen::Index pixels() const { return data.rows(); }
    [[nodiscard]] Eigen::Index index(int x, int y) const { return Eigen::Index(y) * width + x; }

    T& operator()(int x, int y, int c = 0) { return data(index(x, y), c); }
    const T& operator()(int x, int y, int c = 0) const { return data(index(x, y), c); }

    template <typename U, int C>
    [[nodiscard]] bool same_shape(const Image<U, C>& other) const {
        return width == other.width && height == other.height;
    }
};

template <typename Scalar> using Image1 = Image<Scalar, 1>;
template <typename Scalar> using Image3 = Image<Scalar, 3>;
using Mask = Image<bool, 1>;

/// Reads pixel `i` of a 3-channel image as a column vector.
template <typename Scalar>
[[nodiscard]] inline Vector3<Scalar> pixel3(const Image3<Scalar>& img, Eigen::Index i) {
    return img.data.row(i).matrix().transpose();
}

template <typename Scalar>
inline void set_pixel3(Image3<Scalar>& img, Eigen::Index i, const Vector3<Scalar>& v) {
    img.data.row(i) = v.transpose().array();
}

[[nodiscard]] inline Eigen::Index count(const Mask& mask) {
    return mask.data.count();
}

}  // namespace surfel
