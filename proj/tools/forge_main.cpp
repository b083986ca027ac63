// Copyright (c) 2026 The loraforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>

int main() {
    std::puts("forge: placeholder");
    return 0;
}
