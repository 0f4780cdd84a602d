/*
 * Copyright (c) 2026 The zipkit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef ZIPKIT_CALIB_HPP
#define ZIPKIT_CALIB_HPP

#include "zipkit/types.hpp"

#include <optional>
#include <string>

namespace zipkit {

/// Layer-wise Gram/Hessian statistic: gram accumulates 2·X·Xᵀ over batches,
/// finalize() produces the damped inverse (gram + λI)⁻¹ via Cholesky.
/// All math in binary64.
class HessianState {
public:
    explicit HessianState(Index dim, std::string label = {});

    /// gram += 2 · X · Xᵀ. Batch must have `dim` rows.
    void accumulate(const Eigen::Ref<const Matrix>& batch);

    /// Sets the inverse. If `damping` is empty, uses 0.01 · mean(diag(gram)).
    /// On factorization failure the damping is multiplied by 10 and retried,
    /// up to 5 times; the value that succeeded is recorded as
    /// effective_damping(). Throws NumericalError if still not SPD.
    void finalize(std::optional<double> damping = std::nullopt);

    Index dim() const { return dim_; }
    const Matrix& gram() const { return gram_; }
    bool finalized() const { return inverse_.has_value(); }
    const Matrix& inverse() const;
    long samples_seen() const { return samples_seen_; }
    double effective_damping() const { return effective_damping_; }
    const std::string& label() const { return label_; }

private:
    Index dim_;
    std::string label_;
    Matrix gram_;
    long samples_seen_ = 0;
    std::optional<Matrix> inverse_;
    double effective_damping_ = 0.0;
};

}  // namespace zipkit

#endif  // ZIPKIT_CALIB_HPP
