#include "tfab/harness.hpp"

int main(int argc, char** argv) { return tfab::harness::run_cli(argc, argv); }
