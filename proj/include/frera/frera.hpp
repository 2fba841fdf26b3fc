#pragma once

#include "frera/analysis.hpp"
#include "frera/augment.hpp"
#include "frera/checkpoint.hpp"
#include "frera/dataset.hpp"
#include "frera/error.hpp"
#include "frera/nn.hpp"
#include "frera/objective.hpp"
#include "frera/properties.hpp"
#include "frera/random.hpp"
#include "frera/spectral.hpp"
#include "frera/train.hpp"
