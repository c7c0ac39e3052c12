#include "gmn/cli.hpp"

int main(int argc, char** argv) { return gmn::run_cli(argc, argv); }
