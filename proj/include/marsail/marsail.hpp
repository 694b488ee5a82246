#pragma once

#include "marsail/decode.hpp"
#include "marsail/error.hpp"
#include "marsail/geometry.hpp"
#include "marsail/gradcheck.hpp"
#include "marsail/io/dataset.hpp"
#include "marsail/io/image.hpp"
#include "marsail/io/mten.hpp"
#include "marsail/labels.hpp"
#include "marsail/losses.hpp"
#include "marsail/mask.hpp"
#include "marsail/metrics.hpp"
#include "marsail/nn/attention.hpp"
#include "marsail/nn/conv.hpp"
#include "marsail/nn/gru.hpp"
#include "marsail/nn/heads.hpp"
#include "marsail/pipeline.hpp"
#include "marsail/quadtree.hpp"
#include "marsail/tensor.hpp"
#include "marsail/vdc.hpp"
