#include "safire/types.hpp"

#include <algorithm>

namespace safire {

void SourcePartition::validate() const {
  if (sources < 1) throw FormatError("partition source count must be >= 1");
  std::vector<char> seen(sources, 0);
  for (uint8_t v : data) {
    if (v >= sources)
      throw FormatError("partition label " + std::to_string(int(v)) + " outside 0.." +
                        std::to_string(sources - 1));
    seen[v] = 1;
  }
  for (int i = 0; i < sources; ++i)
    if (!seen[i]) throw FormatError("partition label " + std::to_string(i) + " never occurs");
}

}  // namespace safire
