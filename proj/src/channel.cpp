// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#include "xlmimo/channel.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace xlmimo {

namespace {

constexpr double kPi = std::numbers::pi;

double deg2rad(double deg) { return deg * kPi / 180.0; }

}  // namespace

void LayoutConfig::validate() const {
    if (!(grid_spacing > 0.0)) throw std::invalid_argument("layout: grid spacing must be positive");
    if (!(area_side > 0.0)) throw std::invalid_argument("layout: UE drop region is empty");
    if (grid_cols < 0 || grid_rows < 0) throw std::invalid_argument("layout: negative grid shape");
}

void ChannelConfig::validate() const {
    if (!(asd_azimuth_deg > 0.0) || !(asd_elevation_deg > 0.0))
        throw std::invalid_argument("channel: angular spreads must be positive");
    if (!(bandwidth_hz > 0.0)) throw std::invalid_argument("channel: bandwidth must be positive");
    if (!(shadowing_std_db >= 0.0))
        throw std::invalid_argument("channel: shadowing std must be nonnegative");
    if (!(element_spacing > 0.0))
        throw std::invalid_argument("channel: element spacing must be positive");
    if (angle_grid_points < 3) throw std::invalid_argument("channel: angle grid too coarse");
}

std::pair<int, int> grid_shape(const SystemDims& dims, const LayoutConfig& layout) {
    int cols = layout.grid_cols;
    int rows = layout.grid_rows;
    if (cols == 0 && rows == 0) {
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(dims.L))));
        if (side * side == dims.L) {
            cols = rows = side;
        } else {
            cols = dims.L;
            rows = 1;
        }
    } else if (cols == 0) {
        cols = rows > 0 ? dims.L / rows : 0;
    } else if (rows == 0) {
        rows = dims.L / cols;
    }
    if (cols * rows != dims.L)
        throw std::invalid_argument("layout: grid_cols * grid_rows must equal L");
    return {cols, rows};
}

Geometry build_geometry(const SystemDims& dims, const LayoutConfig& layout, Rng& rng) {
    dims.validate();
    layout.validate();
    const auto [cols, rows] = grid_shape(dims, layout);

    Geometry geo;
    geo.cpu_position = layout.cpu_position;
    geo.subarray_positions.reserve(static_cast<std::size_t>(dims.L));
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double x = layout.grid_center_x + (c - 0.5 * (cols - 1)) * layout.grid_spacing;
            const double z = layout.grid_base_z + r * layout.grid_spacing;
            geo.subarray_positions.emplace_back(x, layout.array_y, z);
        }
    }

    std::uniform_real_distribution<double> coord(0.0, layout.area_side);
    geo.ue_positions.reserve(static_cast<std::size_t>(dims.K));
    for (int k = 0; k < dims.K; ++k) {
        const double x = coord(rng);
        const double y = coord(rng);
        geo.ue_positions.emplace_back(x, y, layout.ue_height);
    }
    return geo;
}

double noise_power(double bandwidth_hz, double noise_figure_db) {
    if (!(bandwidth_hz > 0.0)) throw std::invalid_argument("noise_power: bandwidth must be positive");
    const double dbm = -174.0 + 10.0 * std::log10(bandwidth_hz) + noise_figure_db;
    return std::pow(10.0, (dbm - 30.0) / 10.0);
}

double path_loss_db(double distance, const ChannelConfig& config) {
    if (!(distance > 0.0)) throw std::invalid_argument("path_loss: distance must be positive");
    return config.pathloss_ref_db - config.pathloss_exponent_db * std::log10(distance);
}

double path_loss(double distance, const ChannelConfig& config, Rng& rng) {
    double db = path_loss_db(distance, config);
    if (config.shadowing_std_db > 0.0) {
        std::normal_distribution<double> shadow(0.0, config.shadowing_std_db);
        db += shadow(rng);
    }
    return std::pow(10.0, db / 10.0);
}

Direction direction_between(const Vec3& from, const Vec3& to) {
    const Vec3 d = to - from;
    const double horizontal = std::hypot(d.x(), d.y());
    return {std::atan2(d.x(), std::abs(d.y())), std::atan2(d.z(), horizontal)};
}

CVec<double> steering_vector(int n_antennas, double spacing, const Direction& dir) {
    const double phase = 2.0 * kPi * spacing * std::sin(dir.azimuth) * std::cos(dir.elevation);
    CVec<double> a(n_antennas);
    for (int n = 0; n < n_antennas; ++n) a(n) = std::polar(1.0, phase * n);
    return a;
}

CMat<double> local_scattering_correlation(int n_antennas, double spacing, const Direction& nominal,
                                          double asd_azimuth, double asd_elevation,
                                          int grid_points) {
    if (n_antennas < 1) throw std::invalid_argument("local_scattering: need at least one antenna");
    if (!(asd_azimuth > 0.0) || !(asd_elevation > 0.0))
        throw std::invalid_argument("local_scattering: angular spreads must be positive");
    if (grid_points < 3) throw std::invalid_argument("local_scattering: grid too coarse");

    // Normalized Gaussian weights on [-4, 4] standard deviations.
    std::vector<double> offsets(static_cast<std::size_t>(grid_points));
    std::vector<double> weights(offsets.size());
    double total = 0.0;
    for (int i = 0; i < grid_points; ++i) {
        const double u = -4.0 + 8.0 * i / (grid_points - 1);
        offsets[static_cast<std::size_t>(i)] = u;
        weights[static_cast<std::size_t>(i)] = std::exp(-0.5 * u * u);
        total += weights[static_cast<std::size_t>(i)];
    }
    for (double& w : weights) w /= total;

    std::vector<double> sin_az(offsets.size());
    std::vector<double> cos_el(offsets.size());
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        sin_az[i] = std::sin(nominal.azimuth + asd_azimuth * offsets[i]);
        cos_el[i] = std::cos(nominal.elevation + asd_elevation * offsets[i]);
    }

    // R is Hermitian Toeplitz; only the first row E{exp(-j 2 pi d n s)} is integrated.
    std::vector<std::complex<double>> row(static_cast<std::size_t>(n_antennas));
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        for (std::size_t j = 0; j < offsets.size(); ++j) {
            const double weight = weights[i] * weights[j];
            const std::complex<double> step =
                std::polar(1.0, -2.0 * kPi * spacing * sin_az[i] * cos_el[j]);
            std::complex<double> term = weight;
            for (auto& c : row) {
                c += term;
                term *= step;
            }
        }
    }

    CMat<double> R(n_antennas, n_antennas);
    for (int m = 0; m < n_antennas; ++m) {
        for (int n = 0; n < n_antennas; ++n) {
            const auto& c = row[static_cast<std::size_t>(std::abs(m - n))];
            R(m, n) = m > n ? std::conj(c) : c;
        }
        R(m, m) = 1.0;
    }
    return R;
}

CMat<double> psd_sqrt(const CMat<double>& R) {
    Eigen::SelfAdjointEigenSolver<CMat<double>> eig(R);
    if (eig.info() != Eigen::Success) throw std::runtime_error("psd_sqrt: eigendecomposition failed");
    const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
    if (eig.eigenvalues().minCoeff() < -1e-9 * scale)
        throw std::invalid_argument("psd_sqrt: matrix is not positive semidefinite");
    const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * root.cast<std::complex<double>>().asDiagonal() *
           eig.eigenvectors().adjoint();
}

CMat<double> complex_gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
    CMat<double> z(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) {
            const double re = normal(rng);
            const double im = normal(rng);
            z(r, c) = {re, im};
        }
    return z;
}

CVec<double> complex_gaussian(Eigen::Index n, Rng& rng) { return complex_gaussian(n, 1, rng); }

CVec<double> sample_access_channel(const CMat<double>& R, double beta, Rng& rng) {
    if (!(beta >= 0.0)) throw std::invalid_argument("sample_access_channel: negative gain");
    const CMat<double> root = psd_sqrt(R);
    const CVec<double> z = complex_gaussian(R.rows(), rng);
    return std::sqrt(beta) * (root * z);
}

CMat<double> line_of_sight(const Vec3& cpu, const Vec3& sub, int M, int N, double spacing) {
    const CVec<double> a_cpu = steering_vector(M, spacing, direction_between(cpu, sub));
    const CVec<double> a_sub = steering_vector(N, spacing, direction_between(sub, cpu));
    return a_cpu * a_sub.transpose();
}

CMat<double> sample_fronthaul_channel(const CMat<double>& los, double beta, double k_factor_db,
                                      const CMat<double>& R_cpu, const CMat<double>& R_sub,
                                      Rng& rng) {
    if (!(beta >= 0.0)) throw std::invalid_argument("sample_fronthaul_channel: negative gain");
    if (R_cpu.rows() != los.rows() || R_sub.rows() != los.cols())
        throw std::invalid_argument("sample_fronthaul_channel: dimension mismatch");
    // The NLoS draw is consumed even for pure LoS so the stream layout does
    // not depend on the k-factor.
    const CMat<double> z = complex_gaussian(los.rows(), los.cols(), rng);
    if (std::isinf(k_factor_db) && k_factor_db > 0.0) return std::sqrt(beta) * los;

    const double k = std::pow(10.0, k_factor_db / 10.0);
    const CMat<double> nlos = psd_sqrt(R_cpu) * z * psd_sqrt(R_sub).transpose();
    return std::sqrt(beta) * (std::sqrt(k / (1.0 + k)) * los + std::sqrt(1.0 / (1.0 + k)) * nlos);
}

ChannelRealization<> generate_realization(const SystemDims& dims, const Geometry& geometry,
                                          const ChannelConfig& config, Rng& rng) {
    dims.validate();
    config.validate();
    if (static_cast<int>(geometry.subarray_positions.size()) != dims.L ||
        static_cast<int>(geometry.ue_positions.size()) != dims.K)
        throw std::invalid_argument("generate_realization: geometry does not match dims");

    const double asd_az = deg2rad(config.asd_azimuth_deg);
    const double asd_el = deg2rad(config.asd_elevation_deg);
    const double d = config.element_spacing;
    const int grid = config.angle_grid_points;

    ChannelRealization<> out;
    out.H.reserve(static_cast<std::size_t>(dims.L));
    out.G.reserve(static_cast<std::size_t>(dims.L));
    for (int l = 0; l < dims.L; ++l) {
        const Vec3& sub = geometry.subarray_positions[static_cast<std::size_t>(l)];
        CMat<double> H(dims.N, dims.K);
        for (int k = 0; k < dims.K; ++k) {
            const Vec3& ue = geometry.ue_positions[static_cast<std::size_t>(k)];
            const double beta = path_loss((ue - sub).norm(), config, rng);
            const CMat<double> R = local_scattering_correlation(
                dims.N, d, direction_between(sub, ue), asd_az, asd_el, grid);
            H.col(k) = sample_access_channel(R, beta, rng);
        }
        out.H.push_back(std::move(H));

        const Vec3& cpu = geometry.cpu_position;
        const double beta = path_loss((cpu - sub).norm(), config, rng);
        const CMat<double> R_cpu =
            local_scattering_correlation(dims.M, d, direction_between(cpu, sub), asd_az, asd_el, grid);
        const CMat<double> R_sub =
            local_scattering_correlation(dims.N, d, direction_between(sub, cpu), asd_az, asd_el, grid);
        out.G.push_back(sample_fronthaul_channel(line_of_sight(cpu, sub, dims.M, dims.N, d), beta,
                                                 config.rician_k_factor_db, R_cpu, R_sub, rng));
    }
    return out;
}

Rng drop_stream(std::uint64_t master_seed, std::uint64_t drop) {
    std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                      static_cast<std::uint32_t>(master_seed >> 32U),
                      static_cast<std::uint32_t>(drop), static_cast<std::uint32_t>(drop >> 32U)};
    return Rng(seq);
}

Drop draw_drop(const SystemDims& dims, const LayoutConfig& layout, const ChannelConfig& config,
               std::uint64_t drop) {
    Rng rng = drop_stream(config.seed, drop);
    Drop out;
    out.geometry = build_geometry(dims, layout, rng);
    out.channels = generate_realization(dims, out.geometry, config, rng);
    return out;
}

}  // namespace xlmimo
