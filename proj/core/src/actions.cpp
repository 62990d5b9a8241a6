#include "tandem/actions.hpp"

#include <sstream>

namespace tandem {

const char* action_name(int vocab_index) {
  switch (vocab_index) {
    case 0: return "turn-left";
    case 1: return "slight-left";
    case 2: return "straight";
    case 3: return "slight-right";
    case 4: return "turn-right";
    case 5: return "accelerate";
    case 6: return "slow";
    case 7: return "keep";
    case 8: return "stop";
    default: return "?";
  }
}

std::string MetaActionSequence::str() const {
  std::ostringstream os;
  for (int h = 0; h < kHorizons; ++h) {
    if (h) os << " | ";
    os << (h + 1) << "s:" << action_name(lateral(h)) << "/" << action_name(longitudinal(h));
  }
  return os.str();
}

}  // namespace tandem
