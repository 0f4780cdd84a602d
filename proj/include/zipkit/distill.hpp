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
#ifndef ZIPKIT_DISTILL_HPP
#define ZIPKIT_DISTILL_HPP

#include "zipkit/types.hpp"

#include <cstdint>
#include <vector>

namespace zipkit::distill {

/// batch x seq x hidden, row-major.
struct TokenTensor {
    Index batch = 0;
    Index seq = 0;
    Index hidden = 0;
    std::vector<double> values;

    TokenTensor() = default;
    TokenTensor(Index b, Index s, Index h)
        : batch(b), seq(s), hidden(h), values(static_cast<std::size_t>(b * s * h), 0.0) {}

    double& at(Index b, Index s, Index h) {
        return values[static_cast<std::size_t>((b * seq + s) * hidden + h)];
    }
    double at(Index b, Index s, Index h) const {
        return values[static_cast<std::size_t>((b * seq + s) * hidden + h)];
    }
};

/// batch x seq flags, true = padding token.
struct PaddingMask {
    Index batch = 0;
    Index seq = 0;
    std::vector<std::uint8_t> flags;

    PaddingMask() = default;
    PaddingMask(Index b, Index s) : batch(b), seq(s), flags(static_cast<std::size_t>(b * s), 0) {}

    bool padded(Index b, Index s) const { return flags[static_cast<std::size_t>(b * seq + s)] != 0; }
};

struct LossWeights {
    double task = 1.0;   // λ1
    double logit = 0.5;  // λ2
    double token = 0.5;  // λ3
};

/// Mean Euclidean distance between student and teacher hidden vectors over
/// the non-padded token positions of one layer. Errors if every position is
/// padded (the mean is undefined).
double token_loss_layer(const TokenTensor& student, const TokenTensor& teacher,
                        const PaddingMask& mask);

/// Arithmetic mean of token_loss_layer over the supplied layer pairs.
/// `dropped[k]` excludes pair k from the mean (a pruned-away layer).
double token_loss(const std::vector<const TokenTensor*>& students,
                  const std::vector<const TokenTensor*>& teachers, const PaddingMask& mask,
                  const std::vector<std::uint8_t>& dropped = {});

/// Mean over examples (rows) of KL(softmax(teacher/T) || softmax(student/T)),
/// scaled by T². Logits must be finite; T > 0.
double logit_kl(const Matrix& student_logits, const Matrix& teacher_logits,
                double temperature = 1.0);

/// λ1·task + λ2·logit + λ3·token.
double combined_loss(double task_loss, double logit_loss, double token_loss,
                     const LossWeights& weights);

}  // namespace zipkit::distill

#endif  // ZIPKIT_DISTILL_HPP
