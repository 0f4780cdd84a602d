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
#include "zipkit/distill.hpp"

#include <cmath>

namespace zipkit::distill {

namespace {

void check_pair_shapes(const TokenTensor& student, const TokenTensor& teacher,
                       const PaddingMask& mask) {
    if (student.batch != teacher.batch || student.seq != teacher.seq ||
        student.hidden != teacher.hidden)
        throw InputError("token loss: student/teacher tensor shapes differ");
    if (student.batch < 1 || student.seq < 1 || student.hidden < 1)
        throw InputError("token loss: tensor dims must be >= 1");
    if (mask.batch != student.batch || mask.seq != student.seq)
        throw InputError("token loss: padding mask shape does not match tensors");
}

}  // namespace

double token_loss_layer(const TokenTensor& student, const TokenTensor& teacher,
                        const PaddingMask& mask) {
    check_pair_shapes(student, teacher, mask);
    double sum = 0.0;
    long count = 0;
    for (Index b = 0; b < student.batch; ++b) {
        for (Index s = 0; s < student.seq; ++s) {
            if (mask.padded(b, s)) continue;
            double sq = 0.0;
            for (Index h = 0; h < student.hidden; ++h) {
                const double d = student.at(b, s, h) - teacher.at(b, s, h);
                sq += d * d;
            }
            sum += std::sqrt(sq);
            ++count;
        }
    }
    if (count == 0) throw InputError("token loss: every position is padded, mean undefined");
    return sum / static_cast<double>(count);
}

double token_loss(const std::vector<const TokenTensor*>& students,
                  const std::vector<const TokenTensor*>& teachers, const PaddingMask& mask,
                  const std::vector<std::uint8_t>& dropped) {
    if (students.size() != teachers.size())
        throw InputError("token loss: layer pair counts differ");
    if (!dropped.empty() && dropped.size() != students.size())
        throw InputError("token loss: dropped-flag count differs from layer count");
    double sum = 0.0;
    long layers = 0;
    for (std::size_t k = 0; k < students.size(); ++k) {
        if (!dropped.empty() && dropped[k]) continue;
        sum += token_loss_layer(*students[k], *teachers[k], mask);
        ++layers;
    }
    if (layers == 0) throw InputError("token loss: no unpruned layers supplied");
    return sum / static_cast<double>(layers);
}

double logit_kl(const Matrix& student_logits, const Matrix& teacher_logits, double temperature) {
    if (student_logits.rows() != teacher_logits.rows() ||
        student_logits.cols() != teacher_logits.cols())
        throw InputError("logit KL: shapes differ");
    if (student_logits.rows() < 1 || student_logits.cols() < 1)
        throw InputError("logit KL: empty logits");
    if (!(temperature > 0)) throw InputError("logit KL: temperature must be positive");
    if (!student_logits.allFinite() || !teacher_logits.allFinite())
        throw InputError("logit KL: logits must be finite");

    const Index n = student_logits.rows();
    const Index classes = student_logits.cols();
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
        // log-softmax per example, max-shifted
        Eigen::RowVectorXd t = teacher_logits.row(i) / temperature;
        Eigen::RowVectorXd s = student_logits.row(i) / temperature;
        const double tmax = t.maxCoeff();
        const double smax = s.maxCoeff();
        const double tlse = std::log((t.array() - tmax).exp().sum()) + tmax;
        const double slse = std::log((s.array() - smax).exp().sum()) + smax;
        double kl = 0.0;
        for (Index c = 0; c < classes; ++c) {
            const double pt = std::exp(t(c) - tlse);
            kl += pt * ((t(c) - tlse) - (s(c) - slse));
        }
        total += kl;
    }
    return total / static_cast<double>(n) * temperature * temperature;
}

double combined_loss(double task_loss, double logit_loss, double token_loss,
                     const LossWeights& weights) {
    if (!std::isfinite(task_loss) || !std::isfinite(logit_loss) || !std::isfinite(token_loss))
        throw InputError("combined loss: components must be finite");
    return weights.task * task_loss + weights.logit * logit_loss + weights.token * token_loss;
}

}  // namespace zipkit::distill
