/******************************************************************************
 * Copyright 2026 The mapfuse Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *****************************************************************************/

#pragma once

#include <string>
#include <string_view>

#include "mapfuse/compress.hpp"
#include "mapfuse/geometry.hpp"
#include "mapfuse/merge.hpp"

namespace mapfuse {

inline constexpr int kFormatVersion = 1;

/// JSON text of the file formats. Doubles are written in shortest round-trip form, so
/// parse(dump(x)) reproduces every number bit for bit.
std::string dump_map(const SceneMap& map);
SceneMap parse_map(std::string_view text);

std::string dump_footprint(const CompressedMap& cmap);
CompressedMap parse_footprint(std::string_view text);

std::string dump_correspondences(const Correspondences& corr);
Correspondences parse_correspondences(std::string_view text);

/// File helpers. Reading throws kIo for unreadable paths and kParse for malformed content.
std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

SceneMap load_map(const std::string& path);
void save_map(const std::string& path, const SceneMap& map);
CompressedMap load_footprint(const std::string& path);
void save_footprint(const std::string& path, const CompressedMap& cmap);
Correspondences load_correspondences(const std::string& path);
void save_correspondences(const std::string& path, const Correspondences& corr);

}  // namespace mapfuse
