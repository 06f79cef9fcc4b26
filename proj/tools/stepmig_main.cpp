#include "stepmig/cli.hpp"

int main(int argc, char** argv) { return mig::cli_main(argc, argv); }
