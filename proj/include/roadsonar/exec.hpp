#pragma once

namespace roadsonar {

/// Selects the kernel variant. `Serial` is the reference loop kept for testing;
/// `Parallel` distributes independent work items with OpenMP and must produce
/// bit-identical results.
enum class Exec { Serial, Parallel };

/// Environment variable capping the OpenMP thread count.
inline constexpr const char* kThreadCapEnv = "ROADSONAR_THREADS";

/// Reads ROADSONAR_THREADS (if set and positive) and caps the OpenMP pool.
/// Returns the thread count in effect afterwards.
int apply_thread_cap_from_env();

} // namespace roadsonar
