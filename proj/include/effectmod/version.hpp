#ifndef EFFECTMOD_VERSION_HPP
#define EFFECTMOD_VERSION_HPP

namespace effectmod {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kReportSchemaVersion = 1;

}  // namespace effectmod

#endif
