// Umbrella header.
#pragma once

#include "leukonet/common.hpp"
#include "leukonet/data.hpp"
#include "leukonet/dct.hpp"
#include "leukonet/image.hpp"
#include "leukonet/model.hpp"
#include "leukonet/nn.hpp"
#include "leukonet/rng.hpp"
#include "leukonet/stain.hpp"
#include "leukonet/tensor.hpp"
#include "leukonet/train.hpp"
