#include "slq/tensor.hpp"

// Tensor, Tape and all ops are header-implemented templates; this
// translation unit only anchors the non-template helpers.
