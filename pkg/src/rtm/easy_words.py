"""Compact list of familiar English words for the difficult-word test.

A word not on this list counts as "difficult" in the readability index.
The list is deliberately small (common function words plus everyday nouns,
verbs and adjectives); callers can pass their own, larger list.
"""

EASY_WORDS = frozenset("""
a about above across after again against all almost alone along already
also always am among an and animal another answer any anything are around
as ask at away baby back bad ball be because bed been before began begin
behind believe best better between big bird black blue boat body book both
box boy bread bring brother brought build but buy by call came can car
carry cat catch change child children city class clean close cold color
come could country cover cow cry cut dark day did different do does dog
done door down draw dream dress drink drive drop dry each ear early earth
eat egg eight end enough even ever every eye face fall family far farm fast
father feel feet fell few find fine fire first fish five floor fly food foot
for found four friend from front full fun funny game garden gave get girl
give glad go goes going gone good got grass green grew ground grow had hair
hand happy hard has hat have he head hear heard help her here hill him his
hold home hope horse hot house how hundred hurt i ice if in into is it its
jump just keep kept kind king knew know land large last late laugh learn
leave left leg let letter light like line little live long look love made
make man many may me mean men met might milk mind miss money moon more
morning most mother mouth move much must my name near need never new next
nice night nine no north nose not nothing now of off often old on once one
only open or other our out over own paper part party pay people pick
picture place plant play please pull put rain ran read red rest ride right
ring river road rock room round run said same sat saw say school sea see
seem seen seven shall she ship shoe short should show side sing sister sit
six sky sleep small snow so some something song soon sound south speak
spring stand star start stay step still stop story street strong such summer
sun sure table take talk tall teach tell ten than thank that the their them
then there these they thing think this those thought three through time to
today together told too took top town tree try turn two under until up upon
us use very walk want warm was wash watch water way we week well went were
wet what wheel when where which while white who why will wind window winter
wish with woman women wood word work world would write year yellow yes yet
you young your
""".split())
