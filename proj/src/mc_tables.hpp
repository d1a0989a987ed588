#pragma once

#include <cstdint>

namespace frep::mesher::detail {

// Corners 0..7 of a unit cell: (0,0,0) (1,0,0) (1,1,0) (0,1,0), then the same at z = 1.
// Edges: 0:0-1 1:1-2 2:2-3 3:3-0 4:4-5 5:5-6 6:6-7 7:7-4 8:0-4 9:1-5 10:2-6 11:3-7.
extern const std::uint16_t kEdgeTable[256];
extern const std::int8_t kTriTable[256][16];

}  // namespace frep::mesher::detail
