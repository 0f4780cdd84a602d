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
#include "zipkit/calib.hpp"

#include <Eigen/Cholesky>

namespace zipkit {

HessianState::HessianState(Index dim, std::string label)
    : dim_(dim), label_(std::move(label)), gram_(Matrix::Zero(dim, dim)) {
    if (dim <= 0) throw InputError("HessianState dimension must be positive");
}

void HessianState::accumulate(const Eigen::Ref<const Matrix>& batch) {
    if (batch.rows() != dim_) {
        throw InputError("calibration batch has " + std::to_string(batch.rows()) +
                         " rows, Hessian dimension is " + std::to_string(dim_) +
                         (label_.empty() ? "" : " (layer '" + label_ + "')"));
    }
    gram_.noalias() += 2.0 * (batch * batch.transpose());
    // symmetrize; the rank-update leaves only rounding-level asymmetry
    gram_ = ((gram_ + gram_.transpose()) * 0.5).eval();
    samples_seen_ += batch.cols();
}

void HessianState::finalize(std::optional<double> damping) {
    if (samples_seen_ < 1)
        throw InputError("finalize before any calibration batch" +
                         (label_.empty() ? std::string() : " (layer '" + label_ + "')"));
    const double mean_diag = gram_.diagonal().mean();
    double lambda = damping.value_or(0.01 * mean_diag);
    if (lambda < 0) throw InputError("damping must be >= 0");

    for (int attempt = 0; attempt < 6; ++attempt) {
        Matrix damped = gram_;
        damped.diagonal().array() += lambda;
        Eigen::LLT<Matrix> llt(damped);
        if (llt.info() == Eigen::Success) {
            inverse_ = llt.solve(Matrix::Identity(dim_, dim_));
            // enforce exact symmetry of the inverse
            *inverse_ = ((*inverse_ + inverse_->transpose()) * 0.5).eval();
            effective_damping_ = lambda;
            return;
        }
        if (attempt == 5) break;
        // the x10 retry rule is vacuous at lambda = 0; seed proportionally
        lambda = lambda > 0 ? lambda * 10.0 : 1e-10 * std::max(mean_diag, 1.0);
    }
    throw NumericalError("Hessian not positive definite after damping retries" +
                         (label_.empty() ? std::string() : " for layer '" + label_ + "'"));
}

const Matrix& HessianState::inverse() const {
    if (!inverse_) throw InputError("HessianState not finalized");
    return *inverse_;
}

}  // namespace zipkit
