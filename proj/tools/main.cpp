#include "fklboost/cli.hpp"

int main(int argc, char** argv) { return fklboost::run_cli(argc, argv); }
