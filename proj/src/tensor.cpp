#include "aanc/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace aanc {

static_assert(std::endian::native == std::endian::little,
              "tensor dump format assumes a little-endian host");

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    impl_ = std::make_shared<detail::TensorImpl>();
    impl_->data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    impl_->shape = std::move(shape);
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw ShapeError("from_data: " + std::to_string(data.size()) +
                         " values do not fill shape " + shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    return t;
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
    return impl_->data[0];
}

std::int64_t Tensor::offset_of(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank()) {
        throw ShapeError("index rank " + std::to_string(idx.size()) + " vs tensor rank " +
                         std::to_string(rank()));
    }
    std::int64_t off = 0;
    int d = 0;
    for (int i : idx) {
        if (i < 0 || i >= impl_->shape[static_cast<std::size_t>(d)]) {
            throw ShapeError("index out of range in dim " + std::to_string(d));
        }
        off = off * impl_->shape[static_cast<std::size_t>(d)] + i;
        ++d;
    }
    return off;
}

double& Tensor::at(std::initializer_list<int> idx) {
    return impl_->data[static_cast<std::size_t>(offset_of(idx))];
}

double Tensor::at(std::initializer_list<int> idx) const {
    return impl_->data[static_cast<std::size_t>(offset_of(idx))];
}

Tensor& Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    impl_->tracked = v || impl_->tape != nullptr;
    return *this;
}

std::span<const double> Tensor::grad_span() const {
    if (!has_grad()) throw ShapeError("tensor has no gradient");
    return *impl_->grad;
}

Tensor Tensor::grad_tensor() const {
    if (!has_grad()) throw ShapeError("tensor has no gradient");
    return Tensor::from_data(impl_->shape, *impl_->grad);
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.reset();
}

Tensor Tensor::clone() const {
    return Tensor::from_data(impl_->shape, impl_->data);
}

bool Tensor::all_finite() const {
    for (double v : impl_->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// --- dump format -----------------------------------------------------------

void save_tensor(const Tensor& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "tensor v1 " << t.rank();
    for (int i = 0; i < t.rank(); ++i) out << " " << t.dim(i);
    out << "\n";
    std::vector<float> buf(static_cast<std::size_t>(t.numel()));
    const double* src = t.data();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(src[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw DataError("short write: " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::string header;
    if (!std::getline(in, header)) throw DataError("missing tensor header: " + path);
    std::istringstream hs(header);
    std::string magic, version;
    int rank = -1;
    hs >> magic >> version >> rank;
    if (magic != "tensor" || version != "v1" || rank < 0) {
        throw DataError("bad tensor header '" + header + "' in " + path);
    }
    Shape shape(static_cast<std::size_t>(rank));
    for (int i = 0; i < rank; ++i) {
        if (!(hs >> shape[static_cast<std::size_t>(i)]) || shape[static_cast<std::size_t>(i)] <= 0) {
            throw DataError("bad tensor extents in " + path);
        }
    }
    std::size_t n = static_cast<std::size_t>(shape_numel(shape));
    std::vector<float> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float)) {
        throw DataError("truncated tensor payload in " + path);
    }
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(buf[i]);
    return Tensor::from_data(std::move(shape), std::move(data));
}

void save_pgm(const Tensor& frame, const std::string& path) {
    if (frame.rank() != 2) throw ShapeError("save_pgm expects a rank-2 tensor");
    const int h = frame.dim(0), w = frame.dim(1);
    const double* p = frame.data();
    double lo = p[0], hi = p[0];
    for (std::int64_t i = 0; i < frame.numel(); ++i) {
        lo = std::min(lo, p[i]);
        hi = std::max(hi, p[i]);
    }
    const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = (p[static_cast<std::int64_t>(y) * w + x] - lo) * scale;
            row[static_cast<std::size_t>(x)] =
                static_cast<unsigned char>(std::clamp(v, 0.0, 255.0) + 0.5);
        }
        out.write(reinterpret_cast<const char*>(row.data()), w);
    }
    char mm[64];
    std::snprintf(mm, sizeof(mm), "min %.17g\nmax %.17g\n", lo, hi);
    std::ofstream side(path + ".minmax.txt");
    side << mm;
}

}  // namespace aanc
