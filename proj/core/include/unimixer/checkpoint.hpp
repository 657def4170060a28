#pragma once

#include <string>

#include "unimixer/model.hpp"

namespace unimixer {

// Binary layout in docs/checkpoint_format.md.
std::string serialize_checkpoint(UniMixerModel& model);
UniMixerModel deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, UniMixerModel& model);
UniMixerModel load_checkpoint(const std::string& path);

}  // namespace unimixer
