#pragma once

#include "sonic/nn/adam.hpp"
#include "sonic/nn/layers.hpp"
#include "sonic/nn/loss.hpp"
#include "sonic/nn/tensor.hpp"
