#pragma once

// Minimal reverse-mode differentiation: batched layers with explicit backward
// passes, packed-memory attention, SGD/RMSprop and the checkpoint format.

#include "memnav/autodiff/attention.hpp"
#include "memnav/autodiff/checkpoint.hpp"
#include "memnav/autodiff/layers.hpp"
#include "memnav/autodiff/optimizer.hpp"
#include "memnav/autodiff/tensor.hpp"
