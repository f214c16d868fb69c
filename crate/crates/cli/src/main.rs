fn main() {
    println!("cusped");
}
