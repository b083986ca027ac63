// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <stdexcept>
#include <string>

namespace forge {

// Error taxonomy. The CLI maps these onto process exit codes
// (config -> 2, artifact/structural -> 3, training divergence -> 4).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error { using Error::Error; };       // dimension mismatches
struct ConfigError : Error { using Error::Error; };      // bad settings or arguments
struct ContractError : Error { using Error::Error; };    // violated API preconditions
struct StructuralError : Error { using Error::Error; };  // incompatible artifacts/layouts
struct TrainingError : Error { using Error::Error; };    // optimization divergence
struct ArtifactError : Error { using Error::Error; };    // missing or corrupt files

// Checked mode enables extra invariant validation: finiteness of tensor
// payloads at construction and pad integrity during detokenization.
inline std::atomic<bool>& checked_mode_flag() {
    static std::atomic<bool> flag{true};
    return flag;
}
inline bool checked_mode() { return checked_mode_flag().load(std::memory_order_relaxed); }
inline void set_checked_mode(bool on) { checked_mode_flag().store(on, std::memory_order_relaxed); }

struct CheckedModeGuard {
    bool previous;
    explicit CheckedModeGuard(bool on) : previous(checked_mode()) { set_checked_mode(on); }
    ~CheckedModeGuard() { set_checked_mode(previous); }
};

}  // namespace forge
