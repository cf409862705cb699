#include "rkb/cli.hpp"

int main(int argc, char** argv) { return rkb::run(argc, argv); }
