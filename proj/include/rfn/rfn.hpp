#pragma once

#include "rfn/adam.hpp"
#include "rfn/attention.hpp"
#include "rfn/autodiff.hpp"
#include "rfn/checkpoint.hpp"
#include "rfn/cnn.hpp"
#include "rfn/fft.hpp"
#include "rfn/gradcheck.hpp"
#include "rfn/io.hpp"
#include "rfn/layers.hpp"
#include "rfn/model.hpp"
#include "rfn/npy.hpp"
#include "rfn/ops.hpp"
#include "rfn/params.hpp"
#include "rfn/radar.hpp"
#include "rfn/synth.hpp"
#include "rfn/tensor.hpp"
#include "rfn/train.hpp"
#include "rfn/checks.hpp"
