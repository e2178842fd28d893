#ifndef DPOE_DPOE_HPP_
#define DPOE_DPOE_HPP_

#include "dpoe/autograd.hpp"
#include "dpoe/config.hpp"
#include "dpoe/dataset.hpp"
#include "dpoe/detect.hpp"
#include "dpoe/eval.hpp"
#include "dpoe/infer.hpp"
#include "dpoe/inject.hpp"
#include "dpoe/latent.hpp"
#include "dpoe/loss.hpp"
#include "dpoe/networks.hpp"
#include "dpoe/train.hpp"

#endif  // DPOE_DPOE_HPP_
