// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
