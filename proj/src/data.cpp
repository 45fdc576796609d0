#include "glotdr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

namespace glotdr::data {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t id)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), id};
    return std::mt19937_64(seq);
}

} // namespace

void validate(const DomainDataset& d)
{
    if (!d.inputs.allFinite())
        throw std::invalid_argument("dataset inputs must be finite");
    if (d.labeled() && static_cast<Eigen::Index>(d.labels.size()) != d.inputs.rows())
        throw DimensionError("label count does not match input count");
}

DomainDataset subset(const DomainDataset& d, const std::vector<Eigen::Index>& index)
{
    DomainDataset out;
    out.domain = d.domain;
    out.inputs.resize(static_cast<Eigen::Index>(index.size()), d.inputs.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        out.inputs.row(static_cast<Eigen::Index>(i)) = d.inputs.row(index[i]);
        if (d.labeled())
            out.labels.push_back(d.labels[static_cast<std::size_t>(index[i])]);
    }
    return out;
}

DomainDataset concatenate(const std::vector<DomainDataset>& parts)
{
    if (parts.empty())
        return {};
    DomainDataset out;
    out.domain = parts.front().domain;
    Eigen::Index rows = 0;
    for (const auto& p : parts)
        rows += p.size();
    out.inputs.resize(rows, parts.front().inputs.cols());
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        if (p.inputs.cols() != out.inputs.cols())
            throw DimensionError("datasets differ in input width");
        out.inputs.middleRows(r, p.size()) = p.inputs;
        r += p.size();
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    }
    if (!out.labels.empty() && static_cast<Eigen::Index>(out.labels.size()) != rows)
        throw std::invalid_argument("cannot mix labeled and unlabeled datasets");
    return out;
}

Matrix rotate_points(const Matrix& x, double degrees, const RowVector& center)
{
    if (x.cols() < 2 || center.size() != 2)
        throw DimensionError("rotation needs two coordinates");
    const double t = degrees * std::numbers::pi / 180.0;
    Eigen::Matrix2d r;
    r << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
    Matrix out = x;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Eigen::Vector2d v = x.row(i).head(2).transpose() - center.transpose();
        out.row(i).head(2) = (r * v).transpose() + center;
    }
    return out;
}

namespace {

DomainDataset draw_moons(int n, double noise, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    std::normal_distribution<double> jitter(0.0, noise);
    DomainDataset d;
    d.inputs.resize(n, 2);
    for (int i = 0; i < n; ++i) {
        const int y = i % 2;
        const double t = angle(rng);
        double a = std::cos(t), b = std::sin(t);
        if (y == 1) {
            a = 1.0 - a;
            b = 0.5 - b;
        }
        d.inputs(i, 0) = a + (noise > 0.0 ? jitter(rng) : 0.0);
        d.inputs(i, 1) = b + (noise > 0.0 ? jitter(rng) : 0.0);
        d.labels.push_back(y);
    }
    return d;
}

} // namespace

std::pair<DomainDataset, DomainDataset> two_moons_shift(const MoonsShift& spec)
{
    if (spec.n < 2)
        throw std::invalid_argument("two_moons_shift needs n >= 2");
    if (spec.noise < 0.0)
        throw std::invalid_argument("noise must be non-negative");
    if (spec.translation.size() != 2)
        throw DimensionError("translation must be two-dimensional");
    auto src_rng = stream(spec.seed, 0);
    auto tgt_rng = stream(spec.seed, 1);
    DomainDataset source = draw_moons(spec.n, spec.noise, src_rng);
    DomainDataset target = draw_moons(spec.n, spec.noise, tgt_rng);
    RowVector center(2);
    center << 0.5, 0.25;
    target.inputs = rotate_points(target.inputs, spec.angle_deg, center);
    target.inputs.rowwise() += spec.translation;
    target.domain = 1;
    return {std::move(source), std::move(target)};
}

BlobDomains gaussian_blob_domains(const BlobDomainsSpec& spec)
{
    if (spec.domains < 2 || spec.classes < 2)
        throw std::invalid_argument("gaussian_blob_domains needs K >= 2 and M >= 2");
    if (spec.dim < 1 || spec.per_class < 1 || spec.sigma < 0.0)
        throw std::invalid_argument("invalid blob layout");
    BlobDomains out;
    out.class_means = Matrix::Zero(spec.classes, spec.dim);
    for (int m = 0; m < spec.classes; ++m) {
        if (spec.dim == 1) {
            out.class_means(m, 0) = spec.class_radius * m;
        } else {
            const double t = 2.0 * std::numbers::pi * m / spec.classes;
            out.class_means(m, 0) = spec.class_radius * std::cos(t);
            out.class_means(m, 1) = spec.class_radius * std::sin(t);
        }
    }
    auto offset_rng = stream(spec.seed, 0);
    std::normal_distribution<double> n01;
    out.domain_offsets = Matrix(spec.domains, spec.dim).unaryExpr([&](double) { return spec.shift * n01(offset_rng); });
    for (int k = 0; k < spec.domains; ++k) {
        auto rng = stream(spec.seed, static_cast<std::uint32_t>(k + 1));
        DomainDataset d;
        d.domain = k;
        d.inputs.resize(spec.classes * spec.per_class, spec.dim);
        for (int i = 0; i < spec.classes * spec.per_class; ++i) {
            const int m = i % spec.classes;
            for (int c = 0; c < spec.dim; ++c)
                d.inputs(i, c) = out.class_means(m, c) + out.domain_offsets(k, c) + spec.sigma * n01(rng);
            d.labels.push_back(m);
        }
        out.datasets.push_back(std::move(d));
    }
    return out;
}

DomainDataset gaussian_blobs(int n, const RowVector& mean, const RowVector& stddev, std::uint64_t seed)
{
    if (n < 2)
        throw std::invalid_argument("gaussian_blobs needs n >= 2");
    if (mean.size() != stddev.size() || mean.size() == 0)
        throw DimensionError("mean and stddev must have the same nonzero width");
    if ((stddev.array() < 0.0).any())
        throw std::invalid_argument("stddev must be non-negative");
    auto rng = stream(seed, 0);
    std::normal_distribution<double> n01;
    DomainDataset d;
    d.inputs.resize(n, mean.size());
    for (int i = 0; i < n; ++i) {
        const int y = i % 2;
        const double s = y == 1 ? 1.0 : -1.0;
        for (Eigen::Index c = 0; c < mean.size(); ++c)
            d.inputs(i, c) = s * mean(c) + stddev(c) * n01(rng);
        d.labels.push_back(y);
    }
    return d;
}

DomainDataset robust_weak_blobs(int n, int weak, double robust_mean, double robust_sd, double weak_mean,
                                double weak_sd, std::uint64_t seed)
{
    if (weak < 0)
        throw std::invalid_argument("weak coordinate count must be non-negative");
    RowVector mean(weak + 1), sd(weak + 1);
    mean(0) = robust_mean;
    sd(0) = robust_sd;
    mean.tail(weak).setConstant(weak_mean);
    sd.tail(weak).setConstant(weak_sd);
    return gaussian_blobs(n, mean, sd, seed);
}

SslSplit ssl_split(const DomainDataset& d, int n_labeled, int classes, std::uint64_t seed)
{
    if (!d.labeled())
        throw std::invalid_argument("ssl_split needs a labeled dataset");
    if (classes < 1 || n_labeled < 0 || n_labeled % classes != 0 || n_labeled > d.size())
        throw std::invalid_argument("n_labeled must be a multiple of the class count and at most the dataset size");
    std::vector<std::vector<Eigen::Index>> by_class(static_cast<std::size_t>(classes));
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        const int y = d.labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= classes)
            throw std::out_of_range("label outside the class range");
        by_class[static_cast<std::size_t>(y)].push_back(i);
    }
    const auto per_class = static_cast<std::size_t>(n_labeled / classes);
    auto rng = stream(seed, 0);
    std::vector<char> chosen(static_cast<std::size_t>(d.size()), 0);
    for (auto& idx : by_class) {
        if (idx.size() < per_class)
            throw std::invalid_argument("a class has fewer examples than its labeled quota");
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t t = 0; t < per_class; ++t)
            chosen[static_cast<std::size_t>(idx[t])] = 1;
    }
    SslSplit out;
    for (Eigen::Index i = 0; i < d.size(); ++i)
        (chosen[static_cast<std::size_t>(i)] ? out.labeled_index : out.unlabeled_index).push_back(i);
    out.labeled = subset(d, out.labeled_index);
    out.unlabeled = subset(d, out.unlabeled_index);
    out.unlabeled.labels.clear();
    return out;
}

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at)
{
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

void write_be32(std::vector<std::uint8_t>& b, std::uint32_t v)
{
    for (int s = 24; s >= 0; s -= 8)
        b.push_back(static_cast<std::uint8_t>(v >> s));
}

} // namespace

IdxFile parse_idx(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 4)
        throw FormatError("truncated header: expected 4 bytes, got " + std::to_string(bytes.size()), bytes.size());
    IdxFile f;
    f.header.magic = read_be32(bytes, 0);
    if (f.header.magic != kIdxLabels && f.header.magic != kIdxImages)
        throw FormatError("bad magic " + std::to_string(f.header.magic), 0);
    const std::size_t ndims = f.header.magic & 0xFF;
    const std::size_t header = 4 + 4 * ndims;
    if (bytes.size() < header)
        throw FormatError("truncated header: expected " + std::to_string(header) + " bytes, got " +
                              std::to_string(bytes.size()),
                          bytes.size());
    std::size_t count = 1;
    std::vector<std::size_t> shape;
    for (std::size_t k = 0; k < ndims; ++k) {
        f.header.dims.push_back(read_be32(bytes, 4 + 4 * k));
        shape.push_back(f.header.dims.back());
        count *= f.header.dims.back();
    }
    const std::size_t payload = bytes.size() - header;
    if (payload != count)
        throw FormatError("payload size mismatch: expected " + std::to_string(count) + " bytes, got " +
                              std::to_string(payload),
                          header + std::min(payload, count));
    Vector values(static_cast<Eigen::Index>(count));
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint8_t v = bytes[header + i];
        if (f.header.magic == kIdxImages) {
            values(static_cast<Eigen::Index>(i)) = v / 255.0;
        } else {
            values(static_cast<Eigen::Index>(i)) = v;
            f.labels.push_back(v);
        }
    }
    f.tensor = Tensor(std::move(shape), std::move(values));
    return f;
}

IdxFile read_idx(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_idx(bytes);
}

std::vector<int> read_idx_labels(const std::string& path)
{
    auto f = read_idx(path);
    if (f.header.magic != kIdxLabels)
        throw FormatError("expected a label file (magic 2049)", 0);
    return f.labels;
}

std::vector<std::uint8_t> serialize_idx(const IdxFile& f)
{
    if (f.header.magic != kIdxLabels && f.header.magic != kIdxImages)
        throw FormatError("bad magic " + std::to_string(f.header.magic), 0);
    if (f.header.dims.size() != (f.header.magic & 0xFF))
        throw DimensionError("dimension count does not match the magic number");
    std::vector<std::uint8_t> out;
    write_be32(out, f.header.magic);
    std::size_t count = 1;
    for (auto d : f.header.dims) {
        write_be32(out, d);
        count *= d;
    }
    if (static_cast<std::size_t>(f.tensor.values.size()) != count)
        throw DimensionError("tensor size does not match the header");
    for (Eigen::Index i = 0; i < f.tensor.values.size(); ++i) {
        double v = f.tensor.values(i);
        if (f.header.magic == kIdxImages)
            v *= 255.0;
        out.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)));
    }
    return out;
}

void write_idx(const std::string& path, const IdxFile& f)
{
    const auto bytes = serialize_idx(f);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Matrix rotate_images(const Matrix& images, ImageShape shape, double degrees)
{
    if (shape.height < 1 || shape.width < 1 || images.cols() != Eigen::Index{shape.height} * shape.width)
        throw DimensionError("image shape does not match the row width");
    const double t = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(t), s = std::sin(t);
    const double cy = (shape.height - 1) / 2.0, cx = (shape.width - 1) / 2.0;
    Matrix out(images.rows(), images.cols());
    auto pixel = [&](Eigen::Index row, int y, int x) {
        if (y < 0 || x < 0 || y >= shape.height || x >= shape.width)
            return 0.0;
        return images(row, Eigen::Index{y} * shape.width + x);
    };
    for (Eigen::Index n = 0; n < images.rows(); ++n)
        for (int y = 0; y < shape.height; ++y)
            for (int x = 0; x < shape.width; ++x) {
                const double dy = y - cy, dx = x - cx;
                const double sy = c * dy + s * dx + cy;
                const double sx = -s * dy + c * dx + cx;
                const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
                const double fy = sy - y0, fx = sx - x0;
                double v = (1 - fy) * (1 - fx) * pixel(n, y0, x0);
                if (fx > 0)
                    v += (1 - fy) * fx * pixel(n, y0, x0 + 1);
                if (fy > 0)
                    v += fy * (1 - fx) * pixel(n, y0 + 1, x0);
                if (fx > 0 && fy > 0)
                    v += fy * fx * pixel(n, y0 + 1, x0 + 1);
                out(n, Eigen::Index{y} * shape.width + x) = v;
            }
    return out;
}

Matrix corrupt(const Matrix& inputs, Corruption kind, int severity, std::uint64_t seed, std::optional<ImageShape> shape)
{
    if (severity < 1 || severity > 5)
        throw std::invalid_argument("severity must lie in 1..5");
    Matrix out;
    if (kind == Corruption::gaussian_noise) {
        auto rng = stream(seed, 0);
        std::normal_distribution<double> noise(0.0, 0.1 * severity);
        out = inputs.unaryExpr([&](double v) { return v + noise(rng); });
    } else if (shape) {
        out = rotate_images(inputs, *shape, 15.0 * severity);
    } else {
        out = rotate_points(inputs, 15.0 * severity, RowVector::Zero(2));
    }
    if (shape)
        out = out.cwiseMax(0.0).cwiseMin(1.0);
    return out;
}

} // namespace glotdr::data
