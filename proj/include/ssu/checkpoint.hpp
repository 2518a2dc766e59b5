/*
 * Copyright (c) 2026 The SSU Lab Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <filesystem>

#include "ssu/container.hpp"
#include "ssu/model.hpp"

namespace ssu {

template <typename T>
Container checkpoint_container(const Model<T>& model) {
  Container c;
  c.kind = "checkpoint";
  c.meta["dtype"] = dtype_name<T>();
  c.meta["config"] = model.config();
  for (const auto& p : model.params()) c.blobs.push_back(Blob::from_tensor(p.name, std::string(to_string(p.kind)), p.value));
  return c;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model) {
  write_container(path, checkpoint_container(model));
}

template <typename T>
Model<T> model_from_container(const Container& c) {
  const auto config = c.meta.at("config").get<ModelConfig>();
  if (config.precision != precision_of<T>()) throw ArtifactError("checkpoint precision does not match requested type");
  ParameterRegistry<T> reg;
  for (const auto& b : c.blobs) reg.add(b.name, parse_param_kind(b.kind), b.to_tensor<T>());
  return Model<T>(config, std::move(reg));
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  return model_from_container<T>(read_container(path, "checkpoint"));
}

/// Reads only the model config (e.g. to pick the scalar type before loading).
inline ModelConfig peek_checkpoint_config(const std::filesystem::path& path) {
  return read_container(path, "checkpoint").meta.at("config").get<ModelConfig>();
}

}  // namespace ssu
