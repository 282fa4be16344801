#pragma once

#include <optional>
#include <string_view>

namespace dflow::elements {

inline constexpr int kMaxAtomicNumber = 100;

/// Symbol for atomic number 1..100; throws DataError otherwise.
std::string_view symbol(int z);

/// Standard atomic weight in unified atomic mass units.
double atomic_mass(int z);

/// Case-sensitive symbol lookup ("Fe", not "FE").
std::optional<int> atomic_number(std::string_view symbol);

}  // namespace dflow::elements
