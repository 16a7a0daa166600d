#include "standgp/cli.hpp"

int main(int argc, char** argv) { return standgp::main_entry(argc, argv); }
