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
#include "zipkit/types.hpp"

namespace zipkit {

const char* to_string(GroupKind kind) {
    switch (kind) {
        case GroupKind::attention_heads: return "attention_heads";
        case GroupKind::ffn_columns: return "ffn_columns";
        case GroupKind::generic: return "generic";
    }
    return "generic";
}

GroupKind group_kind_from_string(const std::string& s) {
    if (s == "attention_heads") return GroupKind::attention_heads;
    if (s == "ffn_columns") return GroupKind::ffn_columns;
    if (s == "generic") return GroupKind::generic;
    throw InputError("unknown group kind: '" + s + "'");
}

}  // namespace zipkit
