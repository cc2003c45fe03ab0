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

#ifndef XLMIMO_TYPES_HPP
#define XLMIMO_TYPES_HPP

#include <Eigen/Dense>

#include <complex>
#include <random>
#include <stdexcept>
#include <vector>

namespace xlmimo {

template <typename Real>
using Complex = std::complex<Real>;

template <typename Real>
using CVec = Eigen::Matrix<Complex<Real>, Eigen::Dynamic, 1>;

template <typename Real>
using CMat = Eigen::Matrix<Complex<Real>, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Real>
using RVec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

template <typename Real>
using RMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

using Vec3 = Eigen::Vector3d;

/// All randomness in the toolkit is drawn from this engine.
using Rng = std::mt19937_64;

/// Array sizes of the modular system.
struct SystemDims {
    int L = 64;  // subarrays
    int N = 4;   // antennas per subarray
    int M = 12;  // CPU antennas
    int K = 8;   // UEs

    void validate() const {
        if (L < 1 || N < 1 || M < 1 || K < 1)
            throw std::invalid_argument("SystemDims: all dimensions must be >= 1");
    }
};

/// One Monte-Carlo draw of every access and fronthaul channel.
///
/// `H[l]` is the N x K access matrix of subarray l whose column k is h_kl.
/// `G[l]` is the M x N fronthaul matrix from subarray l to the CPU.
template <typename Real = double>
struct ChannelRealization {
    std::vector<CMat<Real>> H;
    std::vector<CMat<Real>> G;

    int subarrays() const { return static_cast<int>(H.size()); }
    int antennas() const { return H.empty() ? 0 : static_cast<int>(H.front().rows()); }
    int ues() const { return H.empty() ? 0 : static_cast<int>(H.front().cols()); }
    int cpu_antennas() const { return G.empty() ? 0 : static_cast<int>(G.front().rows()); }

    auto h(int k, int l) const { return H[static_cast<std::size_t>(l)].col(k); }

    SystemDims dims() const { return {subarrays(), antennas(), cpu_antennas(), ues()}; }

    bool is_finite() const {
        for (const auto& m : H)
            if (!m.allFinite()) return false;
        for (const auto& m : G)
            if (!m.allFinite()) return false;
        return true;
    }

    template <typename Other>
    ChannelRealization<Other> cast() const {
        ChannelRealization<Other> out;
        for (const auto& m : H) out.H.push_back(m.template cast<Complex<Other>>());
        for (const auto& m : G) out.G.push_back(m.template cast<Complex<Other>>());
        return out;
    }
};

}  // namespace xlmimo

#endif  // XLMIMO_TYPES_HPP
