#ifndef GLOTDR_DATA_HPP
#define GLOTDR_DATA_HPP

#include "glotdr/core/tensor.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace glotdr::data {

struct DomainDataset {
    Matrix inputs;
    std::vector<int> labels; // empty when unlabeled
    int domain = 0;

    Eigen::Index size() const { return inputs.rows(); }
    bool labeled() const { return !labels.empty(); }
};

void validate(const DomainDataset& d);

/// Rows `index` of `d` (labels follow when present).
DomainDataset subset(const DomainDataset& d, const std::vector<Eigen::Index>& index);

/// Stacks datasets row-wise; the result keeps the first domain id.
DomainDataset concatenate(const std::vector<DomainDataset>& parts);

struct MoonsShift {
    int n = 400;             // per domain, split evenly between classes
    double noise = 0.1;
    double angle_deg = 30.0; // about the moons' center (0.5, 0.25)
    RowVector translation = RowVector::Zero(2);
    std::uint64_t seed = 0;
};

/// Source moons and an independently drawn, rotated and translated target.
std::pair<DomainDataset, DomainDataset> two_moons_shift(const MoonsShift& spec);

/// Counter-clockwise rotation of 2-D rows about `center`.
Matrix rotate_points(const Matrix& x, double degrees, const RowVector& center);

struct BlobDomainsSpec {
    int domains = 3;
    int classes = 3;
    int dim = 2;
    int per_class = 50;
    double sigma = 0.5;
    double class_radius = 2.0;
    double shift = 1.0; // scale of the per-domain offset
    std::uint64_t seed = 0;
};

struct BlobDomains {
    std::vector<DomainDataset> datasets;
    Matrix class_means;    // classes x dim
    Matrix domain_offsets; // domains x dim
};

/// Class means on a circle, each domain translated by its own offset.
BlobDomains gaussian_blob_domains(const BlobDomainsSpec& spec);

/// Two classes with means -mean and +mean and per-coordinate deviations
/// `stddev`; class 1 is the positive side.
DomainDataset gaussian_blobs(int n, const RowVector& mean, const RowVector& stddev, std::uint64_t seed);

/// Two-class task with one strongly separated coordinate and `weak`
/// coordinates whose class means sit at +-weak_mean.
DomainDataset robust_weak_blobs(int n, int weak, double robust_mean, double robust_sd, double weak_mean,
                                double weak_sd, std::uint64_t seed);

struct SslSplit {
    DomainDataset labeled;
    DomainDataset unlabeled;
    std::vector<Eigen::Index> labeled_index;
    std::vector<Eigen::Index> unlabeled_index;
};

SslSplit ssl_split(const DomainDataset& d, int n_labeled, int classes, std::uint64_t seed);

class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset)
    {
    }
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

struct IdxHeader {
    std::uint32_t magic = 0;
    std::vector<std::uint32_t> dims;
};

inline constexpr std::uint32_t kIdxLabels = 2049;
inline constexpr std::uint32_t kIdxImages = 2051;

struct IdxFile {
    IdxHeader header;
    Tensor tensor;           // images scaled to [0, 1]
    std::vector<int> labels; // label files only
};

IdxFile parse_idx(const std::vector<std::uint8_t>& bytes);
IdxFile read_idx(const std::string& path);
std::vector<int> read_idx_labels(const std::string& path);

std::vector<std::uint8_t> serialize_idx(const IdxFile& f);
void write_idx(const std::string& path, const IdxFile& f);

enum class Corruption { gaussian_noise, rotation };

struct ImageShape {
    int height = 0;
    int width = 0;
};

/// Severity 1..5: noise sigma 0.1 * severity, rotation 15 degrees * severity.
/// With an image shape rows are images clamped to [0, 1]; without one,
/// rotation acts on the first two coordinates about the origin.
Matrix corrupt(const Matrix& inputs, Corruption kind, int severity, std::uint64_t seed,
               std::optional<ImageShape> shape = std::nullopt);

/// Bilinear rotation of each row-major image about its center; outside
/// pixels read as 0.
Matrix rotate_images(const Matrix& images, ImageShape shape, double degrees);

} // namespace glotdr::data

#endif // GLOTDR_DATA_HPP
