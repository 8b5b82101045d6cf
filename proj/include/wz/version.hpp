#pragma once

namespace wz {

inline constexpr int kSchemaVersion = 1;
inline constexpr char kToolName[] = "wzpredict";

}  // namespace wz
