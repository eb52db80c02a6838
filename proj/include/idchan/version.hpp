#pragma once

namespace idchan {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace idchan
