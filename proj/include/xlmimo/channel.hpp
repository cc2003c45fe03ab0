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

#ifndef XLMIMO_CHANNEL_HPP
#define XLMIMO_CHANNEL_HPP

#include "xlmimo/types.hpp"

#include <cstdint>

namespace xlmimo {

/// Placement of subarrays, CPU and UE drop region (meters).
///
/// Subarrays sit on a vertical grid in the plane y = array_y: grid columns
/// are centered on grid_center_x, rows start at grid_base_z and go up.
struct LayoutConfig {
    int grid_cols = 0;  // 0: derived from L (square grid when possible)
    int grid_rows = 0;
    double grid_spacing = 10.0;
    double grid_center_x = 100.0;
    double array_y = 200.0;
    double grid_base_z = 10.0;
    Vec3 cpu_position{100.0, 200.0, 90.0};
    double area_side = 200.0;
    double ue_height = 0.0;

    void validate() const;
};

struct Geometry {
    std::vector<Vec3> subarray_positions;
    Vec3 cpu_position;
    std::vector<Vec3> ue_positions;
};

struct ChannelConfig {
    double asd_azimuth_deg = 15.0;
    double asd_elevation_deg = 15.0;
    double rician_k_factor_db = 10.0;
    double bandwidth_hz = 50e6;
    double noise_figure_db = 3.0;
    double pathloss_ref_db = -30.5;
    double pathloss_exponent_db = 36.7;  // dB per decade of distance
    double shadowing_std_db = 0.0;
    double element_spacing = 0.5;  // wavelengths
    int angle_grid_points = 101;   // per axis for the correlation expectation
    std::uint64_t seed = 1;

    void validate() const;
};

/// Resolves grid_cols/grid_rows from L. Throws if they do not multiply to L.
std::pair<int, int> grid_shape(const SystemDims& dims, const LayoutConfig& layout);

/// Subarray grid, CPU position and K uniform UE drops.
Geometry build_geometry(const SystemDims& dims, const LayoutConfig& layout, Rng& rng);

/// Thermal noise power in watts for the given bandwidth and noise figure.
double noise_power(double bandwidth_hz, double noise_figure_db);

inline double watts_to_dbm(double watts) { return 10.0 * std::log10(watts) + 30.0; }

/// Deterministic part of the large-scale fading in dB.
double path_loss_db(double distance, const ChannelConfig& config);

/// Large-scale gain as a linear power ratio, including one log-normal
/// shadowing draw when shadowing_std_db > 0.
double path_loss(double distance, const ChannelConfig& config, Rng& rng);

/// Angles of the direction from an x-aligned ULA at `from` toward `to`.
/// The azimuth is measured from broadside in the horizontal plane.
struct Direction {
    double azimuth;
    double elevation;
};
Direction direction_between(const Vec3& from, const Vec3& to);

/// Horizontal ULA response: exp(j 2 pi d n sin(az) cos(el)).
CVec<double> steering_vector(int n_antennas, double spacing, const Direction& dir);

/// Local scattering spatial correlation of an n_antennas ULA with Gaussian
/// angular spread around the nominal direction (radians).
///
/// The expectation is evaluated on a 2-D grid truncated at +-4 standard
/// deviations. The result is Hermitian Toeplitz with unit diagonal.
CMat<double> local_scattering_correlation(int n_antennas, double spacing, const Direction& nominal,
                                          double asd_azimuth, double asd_elevation,
                                          int grid_points = 101);

/// Hermitian square root of a PSD matrix. Rejects eigenvalues below
/// -1e-9 * max(1, ||R||).
CMat<double> psd_sqrt(const CMat<double>& R);

/// Circularly-symmetric standard complex Gaussian vector.
CVec<double> complex_gaussian(Eigen::Index n, Rng& rng);
CMat<double> complex_gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// h = sqrt(beta) R^{1/2} z.
CVec<double> sample_access_channel(const CMat<double>& R, double beta, Rng& rng);

/// G = sqrt(beta) (sqrt(k/(1+k)) G_los + sqrt(1/(1+k)) R_cpu^{1/2} Z R_sub^{T/2}).
/// A k-factor of +inf gives the pure line-of-sight channel.
CMat<double> sample_fronthaul_channel(const CMat<double>& los, double beta, double k_factor_db,
                                      const CMat<double>& R_cpu, const CMat<double>& R_sub,
                                      Rng& rng);

/// Unit-modulus line-of-sight matrix a_cpu a_sub^T for the subarray at `sub`.
CMat<double> line_of_sight(const Vec3& cpu, const Vec3& sub, int M, int N, double spacing);

/// Draws every channel of one realization for a fixed geometry.
ChannelRealization<> generate_realization(const SystemDims& dims, const Geometry& geometry,
                                          const ChannelConfig& config, Rng& rng);

/// Random stream for Monte-Carlo drop `drop` under `master_seed`.
Rng drop_stream(std::uint64_t master_seed, std::uint64_t drop);

struct Drop {
    Geometry geometry;
    ChannelRealization<> channels;
};

/// Geometry and channels of one drop, a pure function of (config, seed, drop).
Drop draw_drop(const SystemDims& dims, const LayoutConfig& layout, const ChannelConfig& config,
               std::uint64_t drop);

}  // namespace xlmimo

#endif  // XLMIMO_CHANNEL_HPP
