#pragma once
// c10's logging header defines a glog-style CHECK. Pull it in first, then let
// doctest own the name.
#include <torch/torch.h>

#undef CHECK
#include <doctest.h>
