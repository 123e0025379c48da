#pragma once

#include "fngram/corpus.hpp"
#include "fngram/generate.hpp"
#include "fngram/metrics.hpp"
#include "fngram/model.hpp"
#include "fngram/tensor.hpp"
#include "fngram/training.hpp"
#include "fngram/util.hpp"
#include "fngram/vocab.hpp"
