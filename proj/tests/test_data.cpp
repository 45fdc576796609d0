#include "doctest.h"

#include "glotdr/data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>

using namespace glotdr;
using namespace glotdr::data;

namespace {

RowVector class_mean(const DomainDataset& d, int y)
{
    RowVector s = RowVector::Zero(d.inputs.cols());
    int n = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i)
        if (d.labels[static_cast<std::size_t>(i)] == y) {
            s += d.inputs.row(i);
            ++n;
        }
    return s / n;
}

std::string temp_path(const char* name)
{
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("two_moons_shift: balance and determinism")
{
    MoonsShift spec;
    spec.n = 200;
    spec.seed = 4;
    const auto [s, t] = two_moons_shift(spec);
    CHECK(std::count(s.labels.begin(), s.labels.end(), 0) == 100);
    CHECK(std::count(t.labels.begin(), t.labels.end(), 1) == 100);
    const auto [s2, t2] = two_moons_shift(spec);
    CHECK(s.inputs == s2.inputs);
    CHECK(t.inputs == t2.inputs);
    spec.n = 1;
    CHECK_THROWS(two_moons_shift(spec));
}

TEST_CASE("two_moons_shift: no shift gives the source distribution")
{
    MoonsShift spec;
    spec.n = 4000;
    spec.angle_deg = 0.0;
    spec.seed = 1;
    const auto [s, t] = two_moons_shift(spec);
    const double tol = 3.0 * 0.5 / std::sqrt(2000.0);
    for (int y = 0; y < 2; ++y)
        CHECK((class_mean(s, y) - class_mean(t, y)).cwiseAbs().maxCoeff() <= 2 * tol);
}

TEST_CASE("two_moons_shift: half turn swaps the moons")
{
    MoonsShift spec;
    spec.n = 2000;
    spec.angle_deg = 180.0;
    spec.seed = 2;
    const auto [s, t] = two_moons_shift(spec);
    // the per-coordinate spread of a moon is below 0.75 including noise
    const double tol = 3.0 * 0.75 / std::sqrt(1000.0);
    CHECK((class_mean(t, 0) - class_mean(s, 1)).cwiseAbs().maxCoeff() <= 2 * tol);
    CHECK((class_mean(t, 1) - class_mean(s, 0)).cwiseAbs().maxCoeff() <= 2 * tol);
}

TEST_CASE("rotate_points")
{
    Matrix x(1, 2);
    x << 1.0, 0.0;
    RowVector c = RowVector::Zero(2);
    CHECK(rotate_points(x, 0.0, c) == x);
    const Matrix r = rotate_points(x, 90.0, c);
    CHECK(r(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("gaussian_blob_domains")
{
    BlobDomainsSpec spec;
    spec.domains = 3;
    spec.classes = 3;
    spec.per_class = 400;
    spec.sigma = 0.5;
    spec.seed = 7;
    const auto b = gaussian_blob_domains(spec);
    REQUIRE(b.datasets.size() == 3);
    const double tol = 3.0 * spec.sigma / std::sqrt(400.0);
    for (int k = 0; k < 3; ++k) {
        const auto& d = b.datasets[static_cast<std::size_t>(k)];
        CHECK(d.domain == k);
        CHECK(std::set<int>(d.labels.begin(), d.labels.end()).size() == 3);
        for (int m = 0; m < 3; ++m) {
            const RowVector expected = b.class_means.row(m) + b.domain_offsets.row(k);
            CHECK((class_mean(d, m) - expected).cwiseAbs().maxCoeff() <= tol);
        }
    }

    spec.shift = 0.0;
    const auto flat = gaussian_blob_domains(spec);
    CHECK(flat.domain_offsets.isZero());
    spec.domains = 1;
    CHECK_THROWS(gaussian_blob_domains(spec));
}

TEST_CASE("robust_weak_blobs layout")
{
    const auto d = robust_weak_blobs(4000, 5, 2.0, 0.5, 0.1, 1.0, 3);
    CHECK(d.inputs.cols() == 6);
    const RowVector m1 = class_mean(d, 1);
    CHECK(m1(0) == doctest::Approx(2.0).epsilon(0.05));
    CHECK(std::abs(m1(3) - 0.1) <= 3.0 / std::sqrt(2000.0));
}

TEST_CASE("ssl_split")
{
    MoonsShift spec;
    spec.n = 60;
    const auto d = two_moons_shift(spec).first;
    const auto split = ssl_split(d, 10, 2, 3);
    CHECK(split.labeled.size() == 10);
    CHECK(std::count(split.labeled.labels.begin(), split.labeled.labels.end(), 0) == 5);
    CHECK_FALSE(split.unlabeled.labeled());
    std::vector<Eigen::Index> all = split.labeled_index;
    all.insert(all.end(), split.unlabeled_index.begin(), split.unlabeled_index.end());
    std::sort(all.begin(), all.end());
    std::vector<Eigen::Index> expected(60);
    std::iota(expected.begin(), expected.end(), 0);
    CHECK(all == expected);

    const auto full = ssl_split(d, 60, 2, 3);
    CHECK(full.unlabeled.size() == 0);
    CHECK_THROWS(ssl_split(d, 7, 2, 3));
    CHECK_THROWS(ssl_split(d, 62, 2, 3));
}

TEST_CASE("IDX: single pixel images")
{
    std::vector<std::uint8_t> bytes{0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0xFF};
    auto f = parse_idx(bytes);
    CHECK(f.header.magic == kIdxImages);
    CHECK(f.tensor.values(0) == 1.0);
    bytes.back() = 0x00;
    CHECK(parse_idx(bytes).tensor.values(0) == 0.0);
}

TEST_CASE("IDX: truncation and bad magic")
{
    std::vector<std::uint8_t> bytes{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0x10};
    try {
        parse_idx(bytes);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("expected 2 bytes, got 1") != std::string::npos);
        CHECK(e.offset() == 17);
    }
    bytes[3] = 4;
    CHECK_THROWS_AS(parse_idx(bytes), FormatError);
    CHECK_THROWS_AS(parse_idx({0, 0}), FormatError);
}

TEST_CASE("IDX: files round-trip byte for byte")
{
    std::vector<std::uint8_t> images{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3};
    for (int i = 0; i < 12; ++i)
        images.push_back(static_cast<std::uint8_t>(i * 21 + 3));
    const std::vector<std::uint8_t> labels{0, 0, 8, 1, 0, 0, 0, 3, 4, 0, 9};
    for (const auto& bytes : {images, labels}) {
        const auto path = temp_path("glotdr_roundtrip.idx");
        {
            std::FILE* fp = std::fopen(path.c_str(), "wb");
            std::fwrite(bytes.data(), 1, bytes.size(), fp);
            std::fclose(fp);
        }
        const auto f = read_idx(path);
        CHECK(serialize_idx(f) == bytes);
        write_idx(path, f);
        CHECK(serialize_idx(read_idx(path)) == bytes);
        std::filesystem::remove(path);
    }
    CHECK(parse_idx(labels).labels == std::vector<int>{4, 0, 9});
    CHECK(parse_idx(images).tensor.as_batch().rows() == 2);
}

TEST_CASE("corrupt")
{
    Matrix x = Matrix::Constant(200, 50, 0.5);
    for (int sev = 1; sev <= 5; ++sev) {
        const Matrix out = corrupt(x, Corruption::gaussian_noise, sev, 11);
        const Matrix d = out - x;
        const double sd = std::sqrt((d.array() - d.mean()).square().mean());
        CHECK(std::abs(sd - 0.1 * sev) <= 0.01 * sev);
    }
    const Matrix a = corrupt(x, Corruption::gaussian_noise, 2, 11, ImageShape{5, 10});
    CHECK(a.minCoeff() >= 0.0);
    CHECK(a.maxCoeff() <= 1.0);
    CHECK(a == corrupt(x, Corruption::gaussian_noise, 2, 11, ImageShape{5, 10}));
    CHECK_THROWS(corrupt(x, Corruption::rotation, 0, 1));
    CHECK_THROWS(corrupt(x, Corruption::rotation, 6, 1));

    Matrix img = Matrix::Random(3, 12).cwiseAbs();
    CHECK(rotate_images(img, {3, 4}, 0.0) == img);
    Matrix square(1, 9);
    square << 1, 2, 3, 4, 5, 6, 7, 8, 9;
    const Matrix turned = rotate_images(square, {3, 3}, 90.0);
    CHECK(turned(0, 4) == doctest::Approx(5.0));
    CHECK(turned.sum() == doctest::Approx(45.0));
}
